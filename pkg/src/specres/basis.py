"""Orthonormal spectral test functions on box subdomains.

On an interval (a, b) the 1D family is a sine/cosine ladder chosen by which
endpoints carry an essential (Dirichlet) condition; tensor products of these,
normalized so that value^2 + |gradient|^2 integrates to one, give an
orthonormal basis of the local test space on a box.  Every function is
extended by zero outside its box.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .geometry import BoxDomain, FaceBC, local_coords_batch

__all__ = [
    "AxisVariant",
    "ModeIndex",
    "ModeEval",
    "variant_for_axis",
    "eval_axis",
    "axis_tables",
    "eval_mode",
    "eval_mode_batch",
    "rectangular_modes",
]


class AxisVariant(str, Enum):
    """Which endpoints of the axis are constrained: both, left, right, none."""

    DD = "DD"
    D0 = "D0"
    ZD = "0D"
    ZZ = "00"


def variant_for_axis(low: FaceBC, high: FaceBC) -> AxisVariant:
    table = {
        (FaceBC.DIRICHLET, FaceBC.DIRICHLET): AxisVariant.DD,
        (FaceBC.DIRICHLET, FaceBC.FREE): AxisVariant.D0,
        (FaceBC.FREE, FaceBC.DIRICHLET): AxisVariant.ZD,
        (FaceBC.FREE, FaceBC.FREE): AxisVariant.ZZ,
    }
    return table[(FaceBC(low), FaceBC(high))]


def box_variants(box: BoxDomain) -> tuple[AxisVariant, ...]:
    return tuple(
        variant_for_axis(box.face_bc[2 * j], box.face_bc[2 * j + 1])
        for j in range(box.dim)
    )


@dataclass(frozen=True)
class ModeIndex:
    box_id: int
    k: tuple[int, ...]
    variants: tuple[AxisVariant, ...]

    def __post_init__(self):
        if any(kj < 1 for kj in self.k):
            raise ValueError("per-axis frequency indices start at 1")


@dataclass(frozen=True)
class ModeEval:
    value: float
    gradient: np.ndarray


def _frequency_number(variant: AxisVariant, k: int) -> float:
    if variant is AxisVariant.DD:
        return float(k)
    if variant in (AxisVariant.D0, AxisVariant.ZD):
        return k - 0.5
    return float(k - 1)


def eval_axis(variant: AxisVariant, k: int, a: float, b: float, x):
    """One 1D factor: returns (value, derivative, squared frequency).

    The prefactor sqrt(2/(b-a)) makes the factor L2-normalized; the constant
    mode (variant 00, k=1) is rescaled to sqrt(1/(b-a)) so it is normalized
    too.  lambda = (c_k pi / (b-a))^2 satisfies  int phi'^2 = lambda.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not a < b:
        raise ValueError("need a < b")
    v, d, lam = axis_tables(variant, np.array([k]), a, b, np.atleast_1d(np.asarray(x, dtype=float)))
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(v[0, 0]), float(d[0, 0]), float(lam[0])
    return v[:, 0], d[:, 0], float(lam[0])


def axis_tables(variant: AxisVariant, ks: np.ndarray, a: float, b: float,
                x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized factor tables: values (Q,K), derivatives (Q,K), lambdas (K,)."""
    ks = np.asarray(ks, dtype=int)
    x = np.asarray(x, dtype=float)
    length = b - a
    c = np.array([_frequency_number(variant, int(k)) for k in ks])
    omega = c * (math.pi / length)
    amp = np.full(ks.shape, math.sqrt(2.0 / length))
    if variant is AxisVariant.ZZ:
        amp[ks == 1] = math.sqrt(1.0 / length)
    arg = np.outer(x - a, omega)
    if variant in (AxisVariant.DD, AxisVariant.D0):
        val = np.sin(arg) * amp
        der = np.cos(arg) * (amp * omega)
    else:
        val = np.cos(arg) * amp
        der = -np.sin(arg) * (amp * omega)
    return val, der, omega ** 2


def rectangular_modes(box: BoxDomain, counts) -> list[ModeIndex]:
    """All modes with 1 <= k_j <= counts[j], in lexicographic order."""
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    if len(counts) != box.dim:
        raise ValueError("one frequency count per axis")
    variants = box_variants(box)
    ranges = [range(1, c + 1) for c in counts]
    ks = np.stack([g.reshape(-1) for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
    return [ModeIndex(box_id=box.id, k=tuple(int(v) for v in row), variants=variants)
            for row in ks]


def eval_mode_batch(mode: ModeIndex, box: BoxDomain, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (Q,) and global-coordinate gradients (Q, n); zero outside the box."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t, _ = local_coords_batch(box, x)
    # closure semantics: boundary points take their limit value (nonzero on
    # free faces, needed for boundary pairings); strictly outside is zero
    inside = np.all((t >= -1e-12) & (t <= 1.0 + 1e-12), axis=1)
    lengths = box.side_lengths
    n = box.dim
    vals = []
    ders = []
    lam_sum = 0.0
    for j in range(n):
        s = t[:, j] * lengths[j]
        v, d, lam = axis_tables(mode.variants[j], np.array([mode.k[j]]), 0.0, float(lengths[j]), s)
        vals.append(v[:, 0])
        ders.append(d[:, 0])
        lam_sum += float(lam[0])
    norm = math.sqrt(1.0 + lam_sum)
    value = np.prod(np.stack(vals, axis=0), axis=0) / norm
    grad_local = np.empty((x.shape[0], n))
    for j in range(n):
        g = ders[j] / norm
        for l in range(n):
            if l != j:
                g = g * vals[l]
        grad_local[:, j] = g
    grad = grad_local @ box.unit_axes
    value = np.where(inside, value, 0.0)
    grad = np.where(inside[:, None], grad, 0.0)
    return value, grad


def eval_mode(mode: ModeIndex, box: BoxDomain, x) -> ModeEval:
    v, g = eval_mode_batch(mode, box, np.asarray(x, dtype=float)[None, :])
    return ModeEval(value=float(v[0]), gradient=g[0])
