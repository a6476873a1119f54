"""Weak-residual pairings and the decomposed loss.

For a candidate field u and a test function Phi supported on one box, the
pairing is

    r = sum_q w_q (grad u . grad Phi + f Phi)(x_q) - sum_{q on free faces} w_q (g Phi)(x_q),

i.e. the weak form of -Laplace(u) = -f tested against Phi with natural data
g.  The per-box loss is the sum of squared pairings over that box's mode
set, and the total loss sums the boxes; with an orthonormal local basis this
is the projected dual norm of the residual on each subdomain.

All assembly is separable: the quadrature is a tensor grid in the box frame
and the test functions factor per axis, so pairings, feature matrices and
gradient seeds reduce to small dense contractions.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np

from .basis import (
    AxisVariant,
    ModeIndex,
    axis_tables,
    box_variants,
    eval_mode_batch,
    rectangular_modes,
)
from .geometry import BoxDomain
from .quadrature import QuadratureRule, face_rule

__all__ = ["TestBlock", "PairingVector", "LossBreakdown", "pairings", "loss"]


class TestBlock:
    """One box, its quadrature rule, and a rectangular spectral mode set.

    Caches the per-axis factor tables at the rule nodes so that pairings,
    least-squares rows and backward seeds are a handful of matrix products.
    The rule frame must have the same orientation as the box (restrictions of
    a parent rule qualify); the source-term pairing is precomputed since f is
    fixed during training.
    """

    def __init__(self, box: BoxDomain, counts, rule: QuadratureRule,
                 f=None, neumann=None):
        counts = tuple(int(c) for c in np.atleast_1d(counts))
        if len(counts) != box.dim:
            raise ValueError("one mode count per axis")
        proj = box.unit_axes @ rule.unit_axes.T
        if not np.allclose(proj, np.eye(box.dim), atol=1e-10):
            raise ValueError("rule frame must match the box orientation")
        self.box = box
        self.counts = counts
        self.rule = rule
        self.variants = box_variants(box)
        lengths = box.side_lengths
        # box-local arc length of the rule nodes along each axis
        lo_local = (box.corner - rule.corner) @ rule.unit_axes.T
        self._axis_w = []
        self._vw = []   # weighted value tables, (Q_j, K_j)
        self._dw = []   # weighted derivative tables
        self._v = []
        self._d = []
        lam = []
        for j in range(box.dim):
            s, w = rule.axes[j]
            s_box = s - lo_local[j]
            if np.any(s_box < -1e-10) or np.any(s_box > lengths[j] + 1e-10):
                raise ValueError("rule has nodes outside the box")
            ks = np.arange(1, counts[j] + 1)
            v, d, lam_j = axis_tables(self.variants[j], ks, 0.0, float(lengths[j]), s_box)
            self._v.append(v)
            self._d.append(d)
            self._vw.append(v * w[:, None])
            self._dw.append(d * w[:, None])
            self._axis_w.append(w)
            lam.append(lam_j)
        # H1 normalization: N^2 = 1 + sum_j lambda_j over the mode grid
        grid = np.zeros(counts)
        for j, lam_j in enumerate(lam):
            shape = [1] * box.dim
            shape[j] = counts[j]
            grid = grid + lam_j.reshape(shape)
        self.lam_grid = grid
        self.norm = np.sqrt(1.0 + grid).reshape(-1)
        self.modes = rectangular_modes(box, counts)
        self._nodes = rule.nodes()
        self.f_pair = np.zeros(self.n_modes)
        if f is not None:
            self.f_pair = self._value_pairing(np.asarray(f(self._nodes), dtype=float))
        self.g_pair = np.zeros(self.n_modes)
        if neumann:
            for face, g in neumann:
                pts, w = face_rule(box, face)
                gv = np.asarray(g(pts), dtype=float) * w
                for i, mode in enumerate(self.modes):
                    phi, _ = eval_mode_batch(mode, box, pts)
                    self.g_pair[i] += float(gv @ phi)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def ell(self) -> np.ndarray:
        """Load vector ell(Phi_k) = -int f Phi_k + int_{Gamma_N} g Phi_k."""
        return -self.f_pair + self.g_pair

    def _value_pairing(self, vals: np.ndarray) -> np.ndarray:
        """sum_q w_q vals_q Phi_k(x_q) for all modes."""
        n = self.box.dim
        if n == 1:
            out = self._vw[0].T @ vals
        else:
            grid = vals.reshape(self.rule.counts)
            out = np.einsum("ak,ab,bl->kl", self._vw[0], grid, self._vw[1],
                            optimize=True).reshape(-1)
        return out / self.norm

    def gradient_pairing(self, grad_u: np.ndarray) -> np.ndarray:
        """sum_q w_q grad u . grad Phi_k, with grad_u in global coordinates."""
        gu_loc = grad_u @ self.box.unit_axes.T
        n = self.box.dim
        if n == 1:
            out = self._dw[0].T @ gu_loc[:, 0]
        else:
            q = self.rule.counts
            g1 = gu_loc[:, 0].reshape(q)
            g2 = gu_loc[:, 1].reshape(q)
            out = (np.einsum("ak,ab,bl->kl", self._dw[0], g1, self._vw[1], optimize=True)
                   + np.einsum("ak,ab,bl->kl", self._vw[0], g2, self._dw[1], optimize=True)
                   ).reshape(-1)
        return out / self.norm

    def residual_vector(self, grad_u: np.ndarray) -> np.ndarray:
        return self.gradient_pairing(grad_u) + self.f_pair - self.g_pair

    def feature_matrix(self, gfeat: np.ndarray) -> np.ndarray:
        """Rows b(feature_i, Phi_k): gfeat is (Q, F, n) in global coordinates."""
        gf_loc = np.einsum("qfn,jn->qfj", gfeat, self.box.unit_axes)
        n = self.box.dim
        if n == 1:
            a = self._dw[0].T @ gf_loc[:, :, 0]
        else:
            q = self.rule.counts
            f_cols = gfeat.shape[1]
            g1 = gf_loc[:, :, 0].reshape(q[0], q[1], f_cols)
            g2 = gf_loc[:, :, 1].reshape(q[0], q[1], f_cols)
            a = (np.einsum("ak,abf,bl->klf", self._dw[0], g1, self._vw[1], optimize=True)
                 + np.einsum("ak,abf,bl->klf", self._vw[0], g2, self._dw[1], optimize=True)
                 ).reshape(-1, f_cols)
        return a / self.norm[:, None]

    def gradient_seeds(self, r: np.ndarray) -> np.ndarray:
        """d(sum r^2)/d(grad u) at each node, global coordinates, shape (Q, n)."""
        rt = (2.0 * r / self.norm)
        n = self.box.dim
        if n == 1:
            seeds_loc = (self._dw[0] @ rt)[:, None]
        else:
            q = self.rule.counts
            rg = rt.reshape(self.counts)
            s1 = np.einsum("ak,kl,bl->ab", self._dw[0], rg, self._vw[1], optimize=True)
            s2 = np.einsum("ak,kl,bl->ab", self._vw[0], rg, self._dw[1], optimize=True)
            seeds_loc = np.stack([s1.reshape(-1), s2.reshape(-1)], axis=1)
        return seeds_loc @ self.box.unit_axes


@dataclass
class PairingVector:
    """Residual pairings per box, ordered by (box id, lexicographic mode)."""

    entries: dict[int, np.ndarray]
    modes: dict[int, list[ModeIndex]]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.entries[i] for i in sorted(self.entries)])


@dataclass
class LossBreakdown:
    per_box: dict[int, float]
    total: float
    role: str = "training"

    def to_json(self) -> str:
        d = {str(k): v for k, v in sorted(self.per_box.items())}
        d["total"] = self.total
        return json.dumps(d)


def pairings(u_eval, blocks: list[TestBlock]) -> PairingVector:
    """Evaluate the residual pairings of a candidate field on every block.

    ``u_eval`` maps a (Q, n) batch of points to (values, gradients); only the
    gradients enter the Poisson pairing, the fixed source/boundary parts are
    cached on the blocks.
    """
    entries: dict[int, np.ndarray] = {}
    modes: dict[int, list[ModeIndex]] = {}
    for blk in blocks:
        if blk.box.id in entries:
            raise ValueError(f"duplicate block for box {blk.box.id}")
        _, grad = u_eval(blk.nodes)
        entries[blk.box.id] = blk.residual_vector(np.asarray(grad, dtype=float))
        modes[blk.box.id] = blk.modes
    return PairingVector(entries=entries, modes=modes)


def loss(pv: PairingVector, role: str = "training") -> LossBreakdown:
    """Square and sum the pairings per box; the total sums boxes in id order."""
    per_box = {i: float(r @ r) for i, r in pv.entries.items()}
    total = float(np.sum(np.array([per_box[i] for i in sorted(per_box)])))
    return LossBreakdown(per_box=per_box, total=total, role=role)
