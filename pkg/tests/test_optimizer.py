import numpy as np
import pytest

from specres.geometry import axis_box
from specres.optimizer import (
    AdamState,
    LsSystem,
    TrainSchedule,
    adam_step,
    assemble_ls,
    loss_and_system,
    loss_at,
    loss_gradient,
    ls_solve,
    train,
    validation_loss,
)
from specres.problems import case1, case4
from specres.quadrature import GradingSpec, build_rule
from specres.residual import TestBlock

PI = np.pi


def make_system(a, b):
    return LsSystem(a=np.asarray(a, dtype=float), b=np.asarray(b, dtype=float),
                    row_slices={})


def test_ls_identity():
    assert np.allclose(ls_solve(make_system(np.eye(2), [3.0, -1.0])), [3.0, -1.0])


def test_ls_single_column():
    # normal equation 2 w = 4 by hand
    assert ls_solve(make_system([[1.0], [1.0]], [1.0, 3.0]))[0] == pytest.approx(2.0)


def test_ls_zero_matrix_with_ridge():
    assert np.allclose(ls_solve(make_system(np.zeros((3, 2)), np.zeros(3)), ridge=1e-8), 0.0)


def test_ls_singular_raises():
    with pytest.raises(np.linalg.LinAlgError, match="rank-deficient"):
        ls_solve(make_system(np.zeros((3, 2)), np.ones(3)), ridge=0.0)
    with pytest.raises(ValueError):
        ls_solve(make_system(np.eye(2), np.ones(2)), ridge=-1.0)


def test_ls_ridge_matches_closed_form():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 6))
    b = rng.normal(size=30)
    ridge = 0.37
    w = ls_solve(make_system(a, b), ridge=ridge)
    closed = np.linalg.solve(a.T @ a + ridge * np.eye(6), a.T @ b)
    assert np.allclose(w, closed, rtol=1e-10)


def test_adam_zero_gradient_keeps_params():
    st = AdamState.fresh(4, lr=0.1)
    theta = np.arange(4.0)
    assert np.array_equal(adam_step(st, theta, np.zeros(4)), theta)


def test_adam_first_step_bias_corrected():
    st = AdamState.fresh(1, lr=0.01)
    new = adam_step(st, np.zeros(1), np.ones(1))
    assert new[0] == pytest.approx(-0.01 * 1.0 / (1.0 + 1e-8))
    assert st.t == 1


def test_adam_first_step_sign():
    st = AdamState.fresh(5, lr=0.003)
    grad = np.array([1.0, -2.0, 0.5, -0.1, 3.0])
    delta = adam_step(st, np.zeros(5), grad)
    assert np.all(np.sign(delta) == -np.sign(grad))


def test_assemble_rows_sorted_by_box_and_mode():
    setup = case4().build()
    flat = setup.mlp.init_params(0)
    sys_ = assemble_ls(setup, flat)
    ids = sorted(sys_.row_slices)
    assert ids == [0, 1, 2]
    starts = [sys_.row_slices[i].start for i in ids]
    assert starts == sorted(starts)
    assert sys_.a.shape == (15, setup.mlp.n_features)


def test_zero_sources_give_zero_solution():
    # with f = g = 0 the load vector vanishes and u = 0 is optimal
    box = axis_box([0.0], [PI])
    rule = build_rule(box, GradingSpec(kind="uniform", count=(200,)))
    blk = TestBlock(box, (6,), rule, f=None)
    setup = case4().build()
    setup.groups[0].blocks = [blk]
    setup.groups[0].index = [np.arange(200)]
    setup.groups[0].rule = rule
    setup.groups[0].nodes = rule.nodes()
    setup.groups[0].chi, setup.groups[0].dchi = setup.cutoff(rule.nodes())
    flat = setup.mlp.init_params(1)
    lb, sys_, w = loss_and_system(setup, flat)
    assert np.allclose(sys_.b, 0.0)
    assert np.abs(w).max() <= 1e-8
    assert lb.total <= 1e-16


def test_features_equal_to_modes_give_diagonal_system():
    # if the candidate functions are the modes themselves, b(feat_i, Phi_k)
    # is diagonal with entries lambda/(1+lambda)
    from specres.basis import eval_mode_batch

    box = axis_box([0.0], [PI])
    rule = build_rule(box, GradingSpec(kind="uniform", count=(3000,)))
    blk = TestBlock(box, (4,), rule)
    grads = np.stack([eval_mode_batch(m, box, rule.nodes())[1] for m in blk.modes], axis=1)
    a = blk.feature_matrix(grads)
    lam = blk.lam_grid.reshape(-1)
    assert np.allclose(a, np.diag(lam / (1.0 + lam)), atol=1e-9)


def test_loss_gradient_matches_fd_case4():
    setup = case4().build()
    for seed in range(3):
        flat = setup.mlp.init_params(seed)
        _, _, w = loss_and_system(setup, flat)
        grad = loss_gradient(setup, flat, w)
        rng = np.random.default_rng(seed)
        idx = rng.choice(setup.mlp.trainable_count, size=20, replace=False)
        fd = np.zeros(idx.size)
        for c, i in enumerate(idx):
            fp = flat.copy()
            fp[i] += 1e-5
            fm = flat.copy()
            fm[i] -= 1e-5
            fd[c] = (loss_at(setup, fp, w) - loss_at(setup, fm, w)) / 2e-5
        rel = np.linalg.norm(fd - grad[idx]) / np.linalg.norm(fd)
        assert rel <= 1e-5


def test_ls_never_increases_loss():
    setup = case4().build()
    flat = setup.mlp.init_params(2)
    lb, sys_, w = loss_and_system(setup, flat)
    rng = np.random.default_rng(3)
    for _ in range(100):
        other = w + rng.normal(size=w.shape) * rng.choice([0.01, 1.0, 10.0])
        loss_other = float(np.sum((sys_.a @ other - sys_.b) ** 2))
        assert lb.total <= loss_other + 1e-12


def test_normal_equation_residual_small():
    setup = case1().build()
    flat = setup.mlp.init_params(0)
    sys_ = assemble_ls(setup, flat)
    w = ls_solve(sys_, ridge=0.0)
    r = sys_.a @ w - sys_.b
    assert np.linalg.norm(sys_.a.T @ r) <= 1e-8 * np.linalg.norm(sys_.a.T @ sys_.b)


def test_train_zero_iterations_initial_row_only():
    setup = case4().build()
    state, hist = train(setup, TrainSchedule(iterations=0, lr=1e-3, seed=0))
    assert len(hist) == 1
    assert hist[0][0] == 0
    assert np.isfinite(hist[0][1])


def test_train_determinism():
    setup_a = case4().build()
    _, hist_a = train(setup_a, TrainSchedule(iterations=25, lr=10 ** -3.5, seed=7))
    setup_b = case4().build()
    _, hist_b = train(setup_b, TrainSchedule(iterations=25, lr=10 ** -3.5, seed=7))
    assert hist_a == hist_b


def test_best_so_far_training_loss_non_increasing():
    setup = case4().build()
    _, hist = train(setup, TrainSchedule(iterations=120, lr=10 ** -3.5, seed=0))
    best = np.minimum.accumulate([h[1] for h in hist])
    assert np.all(np.diff(best) <= 0)
    assert best[-1] < best[0]


def test_validation_uses_denser_rules():
    setup = case4().build()
    train_nodes = sum(b.nodes.shape[0] for b in setup.groups[0].blocks)
    val_nodes = sum(b.nodes.shape[0] for b in setup.val_groups[0].blocks)
    assert val_nodes > 2 * train_nodes
    flat = setup.mlp.init_params(0)
    _, _, w = loss_and_system(setup, flat)
    ws, bs, w_out = setup.mlp.unflatten(flat)
    w_out[...] = w
    vl = validation_loss(setup, flat)
    assert vl.role == "validation"
    assert set(vl.per_box) == {0, 1, 2}
    assert vl.total > 0


def test_history_columns_are_finite_floats():
    setup = case4().build()
    _, hist = train(setup, TrainSchedule(iterations=3, lr=1e-3, seed=0,
                                         val_every=2, error_every=2))
    for it, tr, val, err in hist:
        assert isinstance(it, int)
        assert np.isfinite(tr) and np.isfinite(val) and np.isfinite(err)
