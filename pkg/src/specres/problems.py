"""Benchmark catalog: geometries, manufactured solutions, and run setups.

Five configurations, each with a known solution u* and source f = -Laplace u*:

  case1  pentagon covered by an axis square and a rotated square; smooth u*.
  case2  L-shape, two overlapping rectangles; u* has an r^(2/3) corner
         singularity at the re-entrant corner.
  case3  case2 plus four nested subdomains added on a fixed schedule.
  case4  interval (0, pi) with u* = x^0.7 (pi - x); f is not square
         integrable, automatic refinement targets x = 0.
  case5  interval (0, pi) with a sharp Gaussian bump at pi/2.

Reference (non-decomposed) variants of cases 4 and 5 exist for comparison
runs.  Quadrature grading ratios follow the rule of thumb that the smallest
cell should be around 1e-6 of the domain: 0.97 for the 2D 500-per-axis
rules, 0.98 for the 1D 500-point rules and 0.998 for the 5000-point error
rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import sympy as sp

from .adaptivity import RefinementConfig
from .basis import rectangular_modes
from .geometry import BoxDomain, Cover, FaceBC, axis_box, make_hat_cover
from .model import CutoffSpec, Mlp
from .optimizer import EvalGroup, RunSetup, Stage
from .quadrature import GradingSpec, QuadratureRule, build_rule, restrict, validation_counterpart
from .residual import TestBlock

__all__ = [
    "ManufacturedSolution",
    "ErrorMetric",
    "CaseSpec",
    "case1",
    "case2",
    "case3",
    "case4",
    "case4_reference",
    "case5",
    "case5_reference",
    "CASES",
    "relative_h1_error",
    "pentagon_cover",
    "lshape_cover",
]

HIDDEN = (10, 10, 20)


@dataclass(frozen=True)
class ManufacturedSolution:
    u: object
    grad_u: object
    f: object
    singular_points: tuple = ()


class ErrorMetric:
    """Relative H1 error against u* on a fixed overkill rule.

    Pointwise values of u* and its gradient are cached at the (masked)
    nodes; the metric is 100 * |u - u*|_norm / |u*|_norm with the full H1
    norm by default ('h1_semi' drops the value term).
    """

    def __init__(self, nodes: np.ndarray, weights: np.ndarray,
                 solution: ManufacturedSolution, norm: str = "h1"):
        if norm not in ("h1", "h1_semi"):
            raise ValueError("norm must be 'h1' or 'h1_semi'")
        self.nodes = np.atleast_2d(nodes)
        self.weights = np.asarray(weights, dtype=float)
        self.norm = norm
        self.u_star = np.asarray(solution.u(self.nodes), dtype=float)
        self.grad_star = np.atleast_2d(np.asarray(solution.grad_u(self.nodes), dtype=float))
        ref2 = self._norm2(self.u_star, self.grad_star)
        if ref2 <= 0.0:
            raise ValueError("reference solution has zero norm on the error rule")
        self.ref_norm = math.sqrt(ref2)

    def _norm2(self, u, grad):
        e2 = np.einsum("qn,qn->q", grad, grad)
        if self.norm == "h1":
            e2 = e2 + u * u
        return float(self.weights @ e2)

    def __call__(self, u_eval) -> float:
        u, grad = u_eval(self.nodes)
        err2 = self._norm2(np.asarray(u) - self.u_star,
                           np.atleast_2d(np.asarray(grad)) - self.grad_star)
        return 100.0 * math.sqrt(err2) / self.ref_norm

    def dump_solution(self, u_eval, path) -> None:
        """CSV of (x, [y,] u, u_star, |grad u - grad u_star|) on the rule."""
        u, grad = u_eval(self.nodes)
        gerr = np.linalg.norm(np.atleast_2d(grad) - self.grad_star, axis=1)
        cols = [self.nodes[:, j] for j in range(self.nodes.shape[1])]
        header = ",".join([f"x{j}" for j in range(self.nodes.shape[1])]
                          + ["u", "u_star", "grad_err"])
        np.savetxt(path, np.column_stack(cols + [u, self.u_star, gerr]),
                   delimiter=",", header=header, comments="")


def relative_h1_error(u_eval, setup: RunSetup) -> float:
    return float(setup.error_fn(u_eval))


# ---------------------------------------------------------------------------
# solution / cutoff constructors


def _sympy_fields_2d(u_expr, x, y):
    gx, gy = sp.diff(u_expr, x), sp.diff(u_expr, y)
    f_expr = -(sp.diff(gx, x) + sp.diff(gy, y))
    fu = sp.lambdify((x, y), u_expr, "numpy")
    fgx = sp.lambdify((x, y), gx, "numpy")
    fgy = sp.lambdify((x, y), gy, "numpy")
    ff = sp.lambdify((x, y), f_expr, "numpy")

    def u(p):
        return fu(p[:, 0], p[:, 1])

    def grad(p):
        return np.stack([fgx(p[:, 0], p[:, 1]), fgy(p[:, 0], p[:, 1])], axis=1)

    def f(p):
        return ff(p[:, 0], p[:, 1])

    return u, grad, f


def _case1_solution_and_cutoff():
    x, y = sp.symbols("x y", real=True)
    s = (x + 1) * (1 - y**2) * ((x - 1) - (y + 1)) * ((y - 1) + (x - 1))
    u_expr = (x**2 + y**2 - sp.Rational(1, 4)) * s
    u, grad, f = _sympy_fields_2d(sp.expand(u_expr), x, y)
    sval = sp.lambdify((x, y), s, "numpy")
    sgx = sp.lambdify((x, y), sp.diff(s, x), "numpy")
    sgy = sp.lambdify((x, y), sp.diff(s, y), "numpy")

    def chi(p):
        px, py = p[:, 0], p[:, 1]
        return sval(px, py), np.stack([sgx(px, py), sgy(px, py)], axis=1)

    return ManufacturedSolution(u=u, grad_u=grad, f=f), CutoffSpec(chi, "pentagon_edges")


def _lshape_singular_parts(p):
    """s = r^(2/3) sin((2/3)(theta - pi)) and its gradient; harmonic on the
    L-shape with zeros on the two re-entrant edges."""
    px, py = p[:, 0], p[:, 1]
    r2 = px * px + py * py
    r = np.sqrt(r2)
    theta = np.arctan2(py, px)
    psi = (2.0 / 3.0) * (theta - np.pi)
    s = r ** (2.0 / 3.0) * np.sin(psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr = (2.0 / 3.0) * r ** (-1.0 / 3.0) * np.sin(psi)
        dth = (2.0 / 3.0) * r ** (2.0 / 3.0) * np.cos(psi)
        sx = dr * (px / r) - dth * (py / r2)
        sy = dr * (py / r) + dth * (px / r2)
    return s, np.stack([sx, sy], axis=1)


def _case2_solution():
    def poly(p):
        px, py = p[:, 0], p[:, 1]
        val = (px * px - 1.0) * (py * py - 1.0)
        grad = np.stack([2.0 * px * (py * py - 1.0), 2.0 * py * (px * px - 1.0)], axis=1)
        lap = 2.0 * (py * py - 1.0) + 2.0 * (px * px - 1.0)
        return val, grad, lap

    def u(p):
        s, _ = _lshape_singular_parts(p)
        return poly(p)[0] * s

    def grad_u(p):
        s, gs = _lshape_singular_parts(p)
        val, gp, _ = poly(p)
        return gp * s[:, None] + gs * val[:, None]

    def f(p):
        # s is harmonic, so -Lap(p s) = -(s Lap p + 2 grad p . grad s)
        s, gs = _lshape_singular_parts(p)
        _, gp, lap = poly(p)
        return -(s * lap + 2.0 * np.einsum("qn,qn->q", gp, gs))

    return ManufacturedSolution(u=u, grad_u=grad_u, f=f, singular_points=((0.0, 0.0),))


def _case2_cutoff():
    def chi(p):
        px, py = p[:, 0], p[:, 1]
        val = (px * px - 1.0) * (py * py - 1.0)
        gpx = 2.0 * px * (py * py - 1.0)
        gpy = 2.0 * py * (px * px - 1.0)
        r2 = px * px + py * py
        theta = np.arctan2(py, px)
        psi = (2.0 / 3.0) * (theta - np.pi)
        q = np.sin(psi)
        with np.errstate(divide="ignore", invalid="ignore"):
            dq = (2.0 / 3.0) * np.cos(psi)
            qx = dq * (-py / r2)
            qy = dq * (px / r2)
        chi_v = val * q
        return chi_v, np.stack([gpx * q + val * qx, gpy * q + val * qy], axis=1)

    return CutoffSpec(chi, "lshape_angular")


def _case4_solution(alpha: float = 0.7):
    def u(p):
        x = p[:, 0]
        return x ** alpha * (np.pi - x)

    def grad_u(p):
        x = p[:, 0]
        return (alpha * x ** (alpha - 1.0) * (np.pi - x) - x ** alpha)[:, None]

    def f(p):
        x = p[:, 0]
        return -(alpha * (alpha - 1.0) * x ** (alpha - 2.0) * (np.pi - x)
                 - 2.0 * alpha * x ** (alpha - 1.0))

    return ManufacturedSolution(u=u, grad_u=grad_u, f=f, singular_points=((0.0,),))


def _case5_solution(rate: float = 120.0):
    def bump(x):
        return np.exp(-rate * (x - np.pi / 2.0) ** 2)

    def u(p):
        x = p[:, 0]
        return x * (x - np.pi) * bump(x)

    def grad_u(p):
        x = p[:, 0]
        e = bump(x)
        de = -2.0 * rate * (x - np.pi / 2.0) * e
        return ((2.0 * x - np.pi) * e + x * (x - np.pi) * de)[:, None]

    def f(p):
        x = p[:, 0]
        e = bump(x)
        c = x - np.pi / 2.0
        de = -2.0 * rate * c * e
        dde = (4.0 * rate * rate * c * c - 2.0 * rate) * e
        return -(2.0 * e + 2.0 * (2.0 * x - np.pi) * de + x * (x - np.pi) * dde)

    return ManufacturedSolution(u=u, grad_u=grad_u, f=f)


def _interval_cutoff():
    def chi(p):
        x = p[:, 0]
        return x * (np.pi - x), (np.pi - 2.0 * x)[:, None]

    return CutoffSpec(chi, "interval_parabola")


# ---------------------------------------------------------------------------
# covers


def pentagon_cover() -> Cover:
    b1 = axis_box([-1.0, -1.0], [1.0, 1.0], box_id=0)
    b2 = BoxDomain(id=1, corner=np.array([0.0, 0.0]),
                   edge_vectors=np.array([[1.0, -1.0], [1.0, 1.0]]),
                   face_bc=(FaceBC.DIRICHLET,) * 4)
    return Cover(boxes=[b1, b2])


def lshape_cover() -> Cover:
    b1 = axis_box([-1.0, 0.0], [1.0, 1.0], box_id=0)
    b2 = axis_box([0.0, -1.0], [1.0, 1.0], box_id=1)
    return Cover(boxes=[b1, b2])


def lshape_contains(p: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(p)
    inside_square = (np.abs(p[:, 0]) < 1.0) & (np.abs(p[:, 1]) < 1.0)
    return inside_square & ((p[:, 0] > 0.0) | (p[:, 1] > 0.0))


# ---------------------------------------------------------------------------
# case construction helpers


@dataclass
class CaseSpec:
    """A catalog entry: builds a RunSetup, plus the refinement recipe if any."""

    name: str
    builder: object
    refinement: RefinementConfig | None = None

    def build(self, **overrides) -> RunSetup:
        setup = self.builder(**{k: v for k, v in overrides.items()
                                if k in ("modes", "quad_points")})
        for key in ("lr", "iterations", "seed", "val_every", "error_every", "ridge_rel"):
            if overrides.get(key) is not None:
                setattr(setup, key, overrides[key])
        return setup


def _masked_error_metric(rule: QuadratureRule, solution: ManufacturedSolution,
                         mask=None, norm: str = "h1") -> ErrorMetric:
    nodes = rule.nodes()
    weights = rule.weights()
    if mask is not None:
        keep = np.asarray(mask(nodes), dtype=bool)
        nodes, weights = nodes[keep], weights[keep]
    return ErrorMetric(nodes, weights, solution, norm=norm)


def _weak_source(solution: ManufacturedSolution):
    """Source term as it enters the pairing sum_q w (grad u . grad Phi + f Phi).

    The residual vanishes at u* when this carries Laplace(u*), i.e. the
    negative of the manufactured right side f = -Laplace(u*).
    """

    def src(p):
        return -np.asarray(solution.f(p), dtype=float)

    return src


def _box_group(box: BoxDomain, spec: GradingSpec, counts_modes, cutoff, f,
               role: str = "training") -> EvalGroup:
    rule = build_rule(box, spec, role=role)
    group = EvalGroup(rule, cutoff)
    group.add_block(TestBlock(box, counts_modes, rule, f=f))
    return group


def case1() -> CaseSpec:
    def builder(modes=None, quad_points=None):
        kx = ky = 10 if modes is None else int(np.atleast_1d(modes)[0])
        q = 100 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        solution, cutoff = _case1_solution_and_cutoff()
        src = _weak_source(solution)
        cover = pentagon_cover()
        groups, val_groups = [], []
        for box in cover.boxes:
            spec = GradingSpec(kind="uniform", count=(q, q))
            groups.append(_box_group(box, spec, (kx, ky), cutoff, src))
            val_groups.append(_box_group(box, validation_counterpart(spec), (kx, ky),
                                         cutoff, src, role="validation"))
        err_rule = build_rule(axis_box([-1.0, -1.0], [2.0, 1.0]),
                              GradingSpec(kind="uniform", count=(300, 300)),
                              role="overkill")
        metric = _masked_error_metric(err_rule, solution, mask=cover.contains)
        return RunSetup(name="case1", mlp=Mlp(2, HIDDEN), cutoff=cutoff, cover=cover,
                        groups=groups, val_groups=val_groups, error_fn=metric,
                        f=src, lr=1e-2, iterations=5000)

    return CaseSpec(name="case1", builder=builder)


def _case2_setup(long_modes: int, quad_long: int, name: str) -> RunSetup:
    solution = _case2_solution()
    src = _weak_source(solution)
    cutoff = _case2_cutoff()
    cover = lshape_cover()
    short_modes = max(1, long_modes // 2)
    quad_short = max(1, quad_long // 2)
    grading = dict(kind="geometric", focus=(0.0, 0.0), ratio=0.97)
    spec1 = GradingSpec(count=(quad_long, quad_short), **grading)
    spec2 = GradingSpec(count=(quad_short, quad_long), **grading)
    groups = [
        _box_group(cover.boxes[0], spec1, (long_modes, short_modes), cutoff, src),
        _box_group(cover.boxes[1], spec2, (short_modes, long_modes), cutoff, src),
    ]
    val_groups = [
        _box_group(cover.boxes[0], validation_counterpart(spec1),
                   (long_modes, short_modes), cutoff, src, role="validation"),
        _box_group(cover.boxes[1], validation_counterpart(spec2),
                   (short_modes, long_modes), cutoff, src, role="validation"),
    ]
    err_rule = build_rule(axis_box([-1.0, -1.0], [1.0, 1.0]),
                          GradingSpec(kind="geometric", focus=(0.0, 0.0),
                                      ratio=0.97, count=(500, 500)),
                          role="overkill")
    metric = _masked_error_metric(err_rule, solution, mask=lshape_contains)
    return RunSetup(name=name, mlp=Mlp(2, HIDDEN), cutoff=cutoff, cover=cover,
                    groups=groups, val_groups=val_groups, error_fn=metric,
                    f=src, lr=1e-2, iterations=1000)


def case2() -> CaseSpec:
    def builder(modes=None, quad_points=None):
        long_modes = 20 if modes is None else int(np.atleast_1d(modes)[0])
        quad_long = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        return _case2_setup(long_modes, quad_long, "case2")

    return CaseSpec(name="case2", builder=builder)


def case3() -> CaseSpec:
    def builder(modes=None, quad_points=None):
        long_modes = 20 if modes is None else int(np.atleast_1d(modes)[0])
        quad_long = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        setup = _case2_setup(long_modes, quad_long, "case3")
        setup.iterations = 3000
        short_modes = max(1, long_modes // 2)
        extra = [
            # (id, bounds, parent, level, group, mode counts)
            (2, ([-0.6, 0.0], [0.6, 0.6]), 0, 1, 0, (long_modes, short_modes)),
            (3, ([0.0, -0.6], [0.6, 0.6]), 1, 1, 1, (short_modes, long_modes)),
            (4, ([-0.2, 0.0], [0.2, 0.2]), 2, 2, 0, (long_modes, short_modes)),
            (5, ([0.0, -0.2], [0.2, 0.2]), 3, 2, 1, (short_modes, long_modes)),
        ]
        stage_boxes = {1000: [], 2000: []}
        for box_id, (lo, hi), parent, level, gi, counts in extra:
            box = axis_box(lo, hi, box_id=box_id, level=level, parent=parent)
            at = 1000 if level == 1 else 2000
            train_rule = restrict(setup.groups[gi].rule, box)
            val_rule = restrict(setup.val_groups[gi].rule, box)
            stage_boxes[at].append((box, gi,
                                    TestBlock(box, counts, train_rule, f=setup.f),
                                    TestBlock(box, counts, val_rule, f=setup.f)))
        setup.stages = [
            Stage(at_iteration=at,
                  boxes=[b for b, _, _, _ in items],
                  train_additions=[(gi, tb) for _, gi, tb, _ in items],
                  val_additions=[(gi, vb) for _, gi, _, vb in items])
            for at, items in sorted(stage_boxes.items())
        ]
        return setup

    return CaseSpec(name="case3", builder=builder)


def _interval_setup(name: str, cover: Cover, solution, modes_per_box: int,
                    train_spec: GradingSpec, err_spec: GradingSpec,
                    iterations: int) -> RunSetup:
    cutoff = _interval_cutoff()
    src = _weak_source(solution)
    domain = axis_box([0.0], [np.pi])
    train_rule = build_rule(domain, train_spec)
    val_rule = build_rule(domain, validation_counterpart(train_spec), role="validation")
    group = EvalGroup(train_rule, cutoff)
    val_group = EvalGroup(val_rule, cutoff)
    for box in cover.boxes:
        group.add_block(TestBlock(box, modes_per_box, restrict(train_rule, box), f=src))
        val_group.add_block(TestBlock(box, modes_per_box, restrict(val_rule, box), f=src))
    err_rule = build_rule(domain, err_spec, role="overkill")
    metric = ErrorMetric(err_rule.nodes(), err_rule.weights(), solution)
    return RunSetup(name=name, mlp=Mlp(1, HIDDEN), cutoff=cutoff, cover=cover,
                    groups=[group], val_groups=[val_group], error_fn=metric,
                    f=src, base_train_rule=train_rule, base_val_rule=val_rule,
                    lr=10.0 ** -3.5, iterations=iterations)


_CASE4_REFINE = RefinementConfig(tau=0.66, max_ref=5, modes_per_child=5,
                                 level_iterations=500, final_iterations=1000)
_CASE5_REFINE = RefinementConfig(tau=0.66, max_ref=5, modes_per_child=5,
                                 level_iterations=500, final_iterations=500)


def _quarter_knots() -> np.ndarray:
    return np.array([0.0, np.pi / 4.0, np.pi / 2.0, 3.0 * np.pi / 4.0, np.pi])


def case4() -> CaseSpec:
    def builder(modes=None, quad_points=None):
        m = 5 if modes is None else int(np.atleast_1d(modes)[0])
        q = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        spec = GradingSpec(kind="geometric", focus=(0.0,), ratio=0.99, count=(q,))
        err = GradingSpec(kind="geometric", focus=(0.0,), ratio=0.998, count=(5000,))
        return _interval_setup("case4", make_hat_cover(_quarter_knots()),
                               _case4_solution(), m, spec, err, iterations=3500)

    return CaseSpec(name="case4", builder=builder, refinement=_CASE4_REFINE)


def case4_reference(n_modes: int = 40) -> CaseSpec:
    def builder(modes=None, quad_points=None):
        m = n_modes if modes is None else int(np.atleast_1d(modes)[0])
        q = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        spec = GradingSpec(kind="geometric", focus=(0.0,), ratio=0.99, count=(q,))
        err = GradingSpec(kind="geometric", focus=(0.0,), ratio=0.998, count=(5000,))
        cover = Cover(boxes=[axis_box([0.0], [np.pi], box_id=0)])
        return _interval_setup(f"case4-ref{n_modes}", cover, _case4_solution(),
                               m, spec, err, iterations=3500)

    return CaseSpec(name=f"case4-ref{n_modes}", builder=builder)


def case5() -> CaseSpec:
    def builder(modes=None, quad_points=None):
        m = 5 if modes is None else int(np.atleast_1d(modes)[0])
        q = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        spec = GradingSpec(kind="geometric", focus=(np.pi / 2.0,), ratio=0.98, count=(q,))
        err = GradingSpec(kind="geometric", focus=(np.pi / 2.0,), ratio=0.998, count=(5000,))
        return _interval_setup("case5", make_hat_cover(_quarter_knots()),
                               _case5_solution(), m, spec, err, iterations=3000)

    return CaseSpec(name="case5", builder=builder, refinement=_CASE5_REFINE)


def case5_reference(n_modes: int = 60) -> CaseSpec:
    def builder(modes=None, quad_points=None):
        m = n_modes if modes is None else int(np.atleast_1d(modes)[0])
        q = 500 if quad_points is None else int(np.atleast_1d(quad_points)[0])
        spec = GradingSpec(kind="geometric", focus=(np.pi / 2.0,), ratio=0.98, count=(q,))
        err = GradingSpec(kind="geometric", focus=(np.pi / 2.0,), ratio=0.998, count=(5000,))
        cover = Cover(boxes=[axis_box([0.0], [np.pi], box_id=0)])
        return _interval_setup(f"case5-ref{n_modes}", cover, _case5_solution(),
                               m, spec, err, iterations=3000)

    return CaseSpec(name=f"case5-ref{n_modes}", builder=builder)


CASES = {
    "case1": case1,
    "case2": case2,
    "case3": case3,
    "case4": case4,
    "case4-ref": case4_reference,
    "case5": case5,
    "case5-ref60": lambda: case5_reference(60),
    "case5-ref25": lambda: case5_reference(25),
}
