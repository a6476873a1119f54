import numpy as np
import pytest

from specres.basis import eval_mode_batch, rectangular_modes
from specres.geometry import FaceBC, axis_box
from specres.quadrature import GradingSpec, build_rule, restrict
from specres.residual import TestBlock, loss, pairings

PI = np.pi


def interval_block(n_modes=4, n_quad=4000, f=None, box=None):
    box = box or axis_box([0.0], [PI])
    rule = build_rule(box, GradingSpec(kind="uniform", count=(n_quad,)))
    return TestBlock(box, (n_modes,), rule, f=f)


def mode_field(block, j):
    mode = block.modes[j]

    def u_eval(pts):
        return eval_mode_batch(mode, block.box, pts)

    return u_eval


def zero_field(pts):
    return np.zeros(pts.shape[0]), np.zeros_like(pts)


# manufactured smooth 1D solution on (0, pi): u = sin(x) + x(pi - x)
def u_star(pts):
    x = pts[:, 0]
    return np.sin(x) + x * (PI - x), (np.cos(x) + PI - 2 * x)[:, None]


def source_star(pts):
    # the pairing source is Laplace(u*) = u*'' here
    x = pts[:, 0]
    return -np.sin(x) - 2.0


def test_pairing_constant_source():
    blk = interval_block(n_modes=3, n_quad=2000, f=lambda p: np.ones(p.shape[0]))
    r = blk.residual_vector(np.zeros((blk.nodes.shape[0], 1)))
    assert r[0] == pytest.approx(2.0 / np.sqrt(PI), rel=1e-6)
    assert r[1] == pytest.approx(0.0, abs=1e-12)


def test_pairing_of_single_mode():
    blk = interval_block(n_modes=4)
    pv = pairings(mode_field(blk, 0), [blk])
    r = pv.entries[0]
    assert r[0] == pytest.approx(0.5, rel=1e-9)  # lambda/(1+lambda) with lambda=1
    assert np.abs(r[1:]).max() <= 1e-10


def test_residual_of_exact_solution_vanishes():
    blk = interval_block(n_modes=8, n_quad=8000, f=source_star)
    pv = pairings(u_star, [blk])
    assert np.abs(pv.entries[0]).max() <= 1e-4


def test_loss_arithmetic():
    blk = interval_block(n_modes=2)
    pv = pairings(zero_field, [blk])
    pv.entries[0] = np.array([0.5, 0.0])
    lb = loss(pv)
    assert lb.per_box[0] == pytest.approx(0.25)
    assert lb.total == pytest.approx(0.25)

    pv.entries = {0: np.array([0.1, 0.3]), 1: np.array([0.5])}
    lb = loss(pv)
    assert lb.total == pytest.approx(sum(lb.per_box.values()))
    assert lb.total == pytest.approx(0.1 ** 2 + 0.3 ** 2 + 0.25)


def test_loss_zero_for_zero_pairings():
    blk = interval_block(n_modes=3, f=None)
    lb = loss(pairings(zero_field, [blk]))
    assert lb.total == 0.0


def test_loss_json():
    blk = interval_block(n_modes=2)
    lb = loss(pairings(zero_field, [blk]))
    assert '"total"' in lb.to_json()


def test_star_norm_summation_structure():
    b1 = interval_block(n_modes=3, f=lambda p: np.ones(p.shape[0]),
                        box=axis_box([0.0], [PI], box_id=0))
    b2 = TestBlock(axis_box([PI / 4], [PI / 2], box_id=1), (3,),
                   build_rule(axis_box([PI / 4], [PI / 2]),
                              GradingSpec(kind="uniform", count=(500,))),
                   f=lambda p: np.ones(p.shape[0]))
    lb = loss(pairings(zero_field, [b1, b2]))
    m = len(lb.per_box)
    assert max(lb.per_box.values()) <= lb.total <= m * max(lb.per_box.values())
    for v in lb.per_box.values():
        assert 0.0 <= v <= lb.total


def test_identity_gram_consistency():
    # sum of squared pairings equals r^T G^{-1} r with the assembled Gram
    blk = interval_block(n_modes=6, n_quad=4000, f=lambda p: np.cos(p[:, 0]))
    pv = pairings(u_star, [blk])
    r = pv.entries[0]
    pts, w = blk.rule.nodes(), blk.rule.weights()
    k = blk.n_modes
    vals = np.empty((pts.shape[0], k))
    grads = np.empty((pts.shape[0], k))
    for i, m in enumerate(blk.modes):
        v, g = eval_mode_batch(m, blk.box, pts)
        vals[:, i] = v
        grads[:, i] = g[:, 0]
    gram = (vals * w[:, None]).T @ vals + (grads * w[:, None]).T @ grads
    quad = float(r @ np.linalg.solve(gram, r))
    assert loss(pv).total == pytest.approx(quad, rel=1e-5)


def test_perturbation_identity():
    blk = interval_block(n_modes=8, n_quad=8000, f=source_star)

    for j in (0, 2, 4):
        mode = blk.modes[j]
        lam = blk.lam_grid.reshape(-1)[j]

        def u_pert(pts):
            u0, g0 = u_star(pts)
            v, g = eval_mode_batch(mode, blk.box, pts)
            return u0 + v, g0 + g

        lb = loss(pairings(u_pert, [blk]))
        expected = (lam / (1.0 + lam)) ** 2
        assert lb.total == pytest.approx(expected, rel=1e-5)


def test_monotone_truncation():
    small = interval_block(n_modes=4, f=source_star)
    large = interval_block(n_modes=9, f=source_star)

    def u(pts):
        x = pts[:, 0]
        return np.sin(3 * x), (3 * np.cos(3 * x))[:, None]

    assert loss(pairings(u, [large])).total >= loss(pairings(u, [small])).total


def test_duplicate_block_rejected():
    blk = interval_block(n_modes=2)
    with pytest.raises(ValueError, match="duplicate"):
        pairings(zero_field, [blk, blk])


def test_neumann_pairing_cancels_boundary_flux():
    # u* = sin(x) on (0,1) with a free right endpoint: the weak residual
    # includes the flux term and vanishes at the exact solution
    box = axis_box([0.0], [1.0], face_bc=(FaceBC.DIRICHLET, FaceBC.FREE))
    rule = build_rule(box, GradingSpec(kind="uniform", count=(6000,)))
    blk = TestBlock(box, (6,), rule,
                    f=lambda p: -np.sin(p[:, 0]),  # Laplace(u*)
                    neumann=[(1, lambda p: np.full(p.shape[0], np.cos(1.0)))])

    def u(pts):
        x = pts[:, 0]
        return np.sin(x), np.cos(x)[:, None]

    r = pairings(u, [blk]).entries[0]
    assert np.abs(r).max() <= 1e-5
    # dropping the boundary term leaves a visible defect
    blk0 = TestBlock(box, (6,), rule, f=lambda p: -np.sin(p[:, 0]))
    r0 = pairings(u, [blk0]).entries[0]
    assert np.abs(r0).max() > 1e-2


def test_neumann_pairing_2d():
    # u* = sin(x) y on (0,1)^2, free top edge: flux g = u*_y = sin(x) there
    box = axis_box([0.0, 0.0], [1.0, 1.0],
                   face_bc=(FaceBC.DIRICHLET, FaceBC.DIRICHLET,
                            FaceBC.DIRICHLET, FaceBC.FREE))
    rule = build_rule(box, GradingSpec(kind="uniform", count=(200, 200)))
    blk = TestBlock(box, (4, 4), rule,
                    f=lambda p: -np.sin(p[:, 0]) * p[:, 1],
                    neumann=[(3, lambda p: np.sin(p[:, 0]))])

    def u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.sin(x) * y, np.stack([np.cos(x) * y, np.sin(x)], axis=1)

    r = pairings(u, [blk]).entries[0]
    assert np.abs(r).max() <= 1e-3


def test_restricted_rule_block_consistency():
    # a block on a sub-box with the restricted rule reproduces direct pairings
    parent = axis_box([0.0], [PI], box_id=0)
    child = axis_box([PI / 2], [PI], box_id=1)
    rule = build_rule(parent, GradingSpec(kind="uniform", count=(4096,)))
    blk = TestBlock(child, (5,), restrict(rule, child), f=source_star)
    r = pairings(u_star, [blk]).entries[1]
    assert np.abs(r).max() <= 1e-4


def test_feature_matrix_matches_field_pairings():
    # A @ w equals the gradient pairing of the corresponding combination
    rng = np.random.default_rng(0)
    blk = interval_block(n_modes=5, n_quad=1000)
    q = blk.nodes.shape[0]
    gfeat = rng.normal(size=(q, 7, 1))
    a = blk.feature_matrix(gfeat)
    w = rng.normal(size=7)
    direct = blk.gradient_pairing(np.einsum("qfn,f->qn", gfeat, w))
    assert np.allclose(a @ w, direct)


def test_gradient_seeds_match_loss_derivative():
    blk = interval_block(n_modes=5, n_quad=800, f=lambda p: np.cos(p[:, 0]))
    rng = np.random.default_rng(1)
    gu = rng.normal(size=(blk.nodes.shape[0], 1))
    r = blk.residual_vector(gu)
    seeds = blk.gradient_seeds(r)
    i = 137
    h = 1e-7
    gp = gu.copy()
    gp[i, 0] += h
    gm = gu.copy()
    gm[i, 0] -= h
    fd = (np.sum(blk.residual_vector(gp) ** 2) - np.sum(blk.residual_vector(gm) ** 2)) / (2 * h)
    assert seeds[i, 0] == pytest.approx(fd, rel=1e-6)
