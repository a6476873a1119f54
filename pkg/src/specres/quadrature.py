"""Midpoint quadrature rules, uniform or geometrically graded.

Rules are tensor products of 1D midpoint rules stored per axis in the local
arc-length coordinates of a box frame.  Keeping the tensor structure is what
makes the residual assembly separable; the flat (nodes, weights) view is
available for generic consumers and for CSV export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import BoxDomain

__all__ = [
    "GradingSpec",
    "QuadratureRule",
    "build_rule",
    "restrict",
    "validation_counterpart",
    "face_rule",
]

ROLES = ("training", "validation", "overkill")


@dataclass(frozen=True)
class GradingSpec:
    """How to lay out integration cells on each axis of a box.

    ``kind='uniform'`` ignores focus/ratio.  ``kind='geometric'`` grades cell
    widths by ``ratio`` per cell, smallest next to the focus; a focus strictly
    inside an axis splits that axis at the focus and grades both sides toward
    it, dividing the cell count between the sides in proportion to length.
    """

    kind: str
    count: tuple[int, ...]
    focus: tuple[float, ...] | None = None
    ratio: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "geometric"):
            raise ValueError(f"unknown grading kind {self.kind!r}")
        count = tuple(int(c) for c in np.atleast_1d(self.count))
        object.__setattr__(self, "count", count)
        if any(c < 1 for c in count):
            raise ValueError("need at least one cell per axis")
        if self.kind == "geometric":
            if self.ratio is None or not (0.0 < self.ratio < 1.0):
                raise ValueError("geometric grading needs ratio in (0,1)")
            if self.focus is None:
                raise ValueError("geometric grading needs a focus point")
            object.__setattr__(self, "focus", tuple(float(f) for f in np.atleast_1d(self.focus)))


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product midpoint rule on a box frame.

    ``axes[j]`` holds (nodes, weights) along axis j in arc-length coordinates
    measured from ``corner``; global nodes are
    ``corner + sum_j s_j * unit_axes[j]``.
    """

    corner: np.ndarray
    unit_axes: np.ndarray  # (n, n), orthonormal rows
    axes: tuple[tuple[np.ndarray, np.ndarray], ...]
    role: str = "training"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        object.__setattr__(self, "corner", np.asarray(self.corner, dtype=float))
        object.__setattr__(self, "unit_axes", np.asarray(self.unit_axes, dtype=float))

    @property
    def dim(self) -> int:
        return self.corner.size

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s, _ in self.axes)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    def nodes(self) -> np.ndarray:
        """Flat global nodes, shape (Q, n), row-major over axes."""
        grids = np.meshgrid(*[s for s, _ in self.axes], indexing="ij")
        local = np.stack([g.reshape(-1) for g in grids], axis=1)
        return self.corner + local @ self.unit_axes

    def weights(self) -> np.ndarray:
        w = self.axes[0][1]
        for _, wj in self.axes[1:]:
            w = np.multiply.outer(w, wj)
        return w.reshape(-1)

    def weight_sum(self) -> float:
        return float(np.prod([wj.sum() for _, wj in self.axes]))

    def with_role(self, role: str) -> "QuadratureRule":
        return replace(self, role=role)

    def to_csv(self, path) -> None:
        pts = self.nodes()
        w = self.weights()
        header = ",".join([f"x{j}" for j in range(self.dim)] + ["weight"])
        np.savetxt(path, np.column_stack([pts, w]), delimiter=",",
                   header=header, comments="")


def _midpoint_cells(widths: np.ndarray, lo: float) -> tuple[np.ndarray, np.ndarray]:
    edges = lo + np.concatenate([[0.0], np.cumsum(widths)])
    nodes = 0.5 * (edges[:-1] + edges[1:])
    return nodes, widths.copy()


def _geometric_side(lo: float, hi: float, n: int, ratio: float, focus_at_lo: bool):
    """Cells on (lo, hi) with widths growing by 1/ratio away from the focus."""
    length = hi - lo
    k = np.arange(n)
    widths = length * (1.0 - ratio) * ratio ** (n - 1 - k) / (1.0 - ratio ** n)
    if not focus_at_lo:
        widths = widths[::-1]
    return _midpoint_cells(widths, lo)


def _axis_rule_1d(lo: float, hi: float, n: int, spec: GradingSpec, axis: int):
    if spec.kind == "uniform":
        widths = np.full(n, (hi - lo) / n)
        return _midpoint_cells(widths, lo)
    c = spec.focus[axis]
    tol = 1e-12 * (hi - lo)
    if c <= lo + tol:
        return _geometric_side(lo, hi, n, spec.ratio, focus_at_lo=True)
    if c >= hi - tol:
        return _geometric_side(lo, hi, n, spec.ratio, focus_at_lo=False)
    frac = (c - lo) / (hi - lo)
    n_left = min(max(int(round(n * frac)), 1), n - 1)
    nl, wl = _geometric_side(lo, c, n_left, spec.ratio, focus_at_lo=False)
    nr, wr = _geometric_side(c, hi, n - n_left, spec.ratio, focus_at_lo=True)
    return np.concatenate([nl, nr]), np.concatenate([wl, wr])


def build_rule(box: BoxDomain, spec: GradingSpec, role: str = "training") -> QuadratureRule:
    """Tensor midpoint rule on a box.

    For geometric grading the focus point is mapped into the box frame, so a
    rotated box grades along its own axes.
    """
    n = box.dim
    counts = spec.count if len(spec.count) == n else spec.count * n
    lengths = box.side_lengths
    if spec.kind == "geometric":
        rel = np.asarray(spec.focus, dtype=float) - box.corner
        focus_local = (rel @ box.edge_vectors.T) / lengths ** 2 * lengths
        spec = replace(spec, focus=tuple(focus_local))
    axes = tuple(
        _axis_rule_1d(0.0, float(lengths[j]), counts[j], spec, j) for j in range(n)
    )
    return QuadratureRule(corner=box.corner, unit_axes=box.unit_axes, axes=axes, role=role)


def restrict(rule: QuadratureRule, box: BoxDomain) -> QuadratureRule:
    """Keep the nodes strictly inside ``box``, weights unchanged.

    The box must be aligned with the rule frame (its axes parallel to the
    rule's); this is how refined subdomains inherit the integration points of
    the domain they came from.
    """
    lengths = box.side_lengths
    axes_dir = box.unit_axes
    # box axis j must match rule axis j up to sign
    proj = axes_dir @ rule.unit_axes.T
    if not np.allclose(np.abs(proj), np.eye(rule.dim), atol=1e-10):
        raise ValueError("restriction requires a box aligned with the rule frame")
    rel = box.corner - rule.corner
    lo_local = rel @ rule.unit_axes.T
    new_axes = []
    for j in range(rule.dim):
        sgn = proj[j, j]
        lo = lo_local[j] if sgn > 0 else lo_local[j] - lengths[j]
        hi = lo + lengths[j]
        s, w = rule.axes[j]
        keep = (s > lo) & (s < hi)
        if not np.any(keep):
            raise ValueError("subdomain contains no integration points")
        new_axes.append((s[keep], w[keep]))
    return QuadratureRule(corner=rule.corner, unit_axes=rule.unit_axes,
                          axes=tuple(new_axes), role=rule.role)


def validation_counterpart(spec: GradingSpec) -> GradingSpec:
    """Same layout, 117% more points per axis (count -> ceil(2.17 * count))."""
    count = tuple((c * 217 + 99) // 100 for c in spec.count)
    return replace(spec, count=count)


def face_rule(box: BoxDomain, face: int, spec: GradingSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on one face of a box (for natural boundary terms).

    In 1D the face is a single point with weight 1.  In higher dimensions the
    remaining axes carry a uniform midpoint rule given by ``spec`` (or 64
    cells per axis by default).
    """
    n = box.dim
    axis, side = divmod(face, 2)
    if n == 1:
        pt = box.corner + side * box.edge_vectors[0]
        return pt[None, :], np.array([1.0])
    lengths = box.side_lengths
    other = [j for j in range(n) if j != axis]
    counts = spec.count if spec is not None else (64,) * (n - 1)
    grids = []
    weights = []
    for m, j in zip(counts, other):
        s, w = _midpoint_cells(np.full(m, lengths[j] / m), 0.0)
        grids.append(s)
        weights.append(w)
    mesh = np.meshgrid(*grids, indexing="ij")
    local = np.zeros((mesh[0].size, n))
    for g, j in zip(mesh, other):
        local[:, j] = g.reshape(-1)
    local[:, axis] = side * lengths[axis]
    w = weights[0]
    for wj in weights[1:]:
        w = np.multiply.outer(w, wj)
    return box.corner + local @ box.unit_axes, w.reshape(-1)
