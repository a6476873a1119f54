"""Numerical verification of the cover-decomposition theory.

Three groups of checks for the two catalog geometries (L-shape, pentagon):

* the distance-quotient partition of unity rho_i = p_i / sum_j p_j, its
  gradient bound, and the detection of the boundary points where it blows up;
* the explicit angular partitions used near those points;
* the equivalence constant of the minimal-energy decomposition on the
  L-shape, estimated on a finite-difference grid via harmonic extensions on
  the overlap square, with the theoretical ceiling xi^2 <= 2.

Grid fields use index [i, j] for the point (x_i, y_j).  Discrete Dirichlet
energies are plain sums of squared edge differences, whose minimizer subject
to boundary data is exactly the 5-point harmonic field (in 2D the mesh-size
factors cancel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .geometry import Cover
from .problems import lshape_cover, pentagon_cover

__all__ = [
    "PartitionOfUnity",
    "lshape_partition",
    "pentagon_partition",
    "find_singular_points",
    "grad_bound_check",
    "local_polar_partition",
    "HarmonicPair",
    "harmonic_extensions",
    "dirichlet_energy",
    "dirichlet_cross",
    "xi_estimate",
    "min_energy_decompose",
]


def _convex_polygon_distance(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Distance from points to a closed convex polygon (CCW vertices)."""
    pts = np.atleast_2d(pts)
    m = verts.shape[0]
    inside = np.ones(pts.shape[0], dtype=bool)
    d_edges = np.full((pts.shape[0], m), np.inf)
    for k in range(m):
        a = verts[k]
        b = verts[(k + 1) % m]
        e = b - a
        rel = pts - a
        cross = e[0] * rel[:, 1] - e[1] * rel[:, 0]
        inside &= cross >= 0.0
        t = np.clip((rel @ e) / (e @ e), 0.0, 1.0)
        proj = a + t[:, None] * e
        d_edges[:, k] = np.linalg.norm(pts - proj, axis=1)
    d = d_edges.min(axis=1)
    d[inside] = 0.0
    return d


class PartitionOfUnity:
    """p_i(x) = d(x, Omega \\ Omega_i) and rho_i = p_i / sum_j p_j.

    The complement of each box inside the domain is supplied as a list of
    convex polygons, so every p_i is an exact closed-form distance.
    """

    def __init__(self, cover: Cover, complements: list[list[np.ndarray]],
                 domain_vertices: np.ndarray):
        if len(complements) != len(cover.boxes):
            raise ValueError("one complement region per box")
        self.cover = cover
        self.complements = [[np.asarray(v, dtype=float) for v in polys]
                            for polys in complements]
        self.domain_vertices = np.asarray(domain_vertices, dtype=float)

    @property
    def m(self) -> int:
        return len(self.cover.boxes)

    def p(self, i: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.complements[i]:
            # the box covers the whole domain; use the distance to its boundary
            return np.full(x.shape[0], np.inf)
        return np.min(
            np.stack([_convex_polygon_distance(x, poly) for poly in self.complements[i]]),
            axis=0,
        )

    def p_all(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([self.p(i, x) for i in range(self.m)], axis=1)

    def rho(self, x: np.ndarray) -> np.ndarray:
        p = self.p_all(x)
        total = p.sum(axis=1)
        if np.any(total == 0.0):
            raise ValueError("rho is undefined at a singular point")
        return p / total[:, None]


def lshape_partition() -> PartitionOfUnity:
    comp1 = [np.array([[0.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0]])]
    comp2 = [np.array([[-1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]])]
    domain_vertices = np.array([
        [1.0, 1.0], [-1.0, 1.0], [-1.0, 0.0], [0.0, 0.0], [0.0, -1.0], [1.0, -1.0],
    ])
    return PartitionOfUnity(lshape_cover(), [comp1, comp2], domain_vertices)


def pentagon_partition() -> PartitionOfUnity:
    # outside the axis square: the triangle of the rotated square beyond x=1
    comp1 = [np.array([[1.0, -1.0], [2.0, 0.0], [1.0, 1.0]])]
    # outside the rotated square: the axis square minus the wedge x >= |y|
    comp2 = [
        np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]]),
        np.array([[-1.0, 0.0], [-1.0, -1.0], [1.0, -1.0], [0.0, 0.0]]),
    ]
    domain_vertices = np.array([
        [-1.0, -1.0], [1.0, -1.0], [2.0, 0.0], [1.0, 1.0], [-1.0, 1.0],
    ])
    return PartitionOfUnity(pentagon_cover(), [comp1, comp2], domain_vertices)


def find_singular_points(pou: PartitionOfUnity, delta: float = 1e-3,
                         n_angles: int = 64) -> list[tuple[float, float]]:
    """Boundary points where every p_i vanishes.

    A candidate (vertex of the domain or of a box) is regular when, on a
    sampled ball of radius delta, membership in the domain coincides with
    membership in a single box; singular otherwise.
    """
    candidates = [tuple(v) for v in pou.domain_vertices]
    for box in pou.cover.boxes:
        candidates.extend(tuple(v) for v in box.vertices())
    seen = set()
    uniq = []
    for c in candidates:
        key = (round(c[0], 9), round(c[1], 9))
        if key not in seen:
            seen.add(key)
            uniq.append(np.array(c))

    angles = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    radii = delta * np.array([0.25, 0.5, 0.75, 1.0])
    ring = np.stack([np.outer(radii, np.cos(angles)).ravel(),
                     np.outer(radii, np.sin(angles)).ravel()], axis=1)

    from .geometry import local_coords_batch

    singular = []
    for c in uniq:
        samples = c + ring
        in_domain = pou.cover.contains(samples)
        if not in_domain.any():
            continue  # isolated from the domain; p_i has no zero crossing here
        regular = False
        for box in pou.cover.boxes:
            in_box = local_coords_batch(box, samples)[1]
            if np.array_equal(in_domain, in_box):
                regular = True
                break
        if not regular:
            singular.append((float(c[0]), float(c[1])))
    return sorted(singular)


def grad_bound_check(pou: PartitionOfUnity, samples: np.ndarray,
                     h: float = 1e-6, slack: float = 1.05) -> dict:
    """Finite-difference |grad rho_i| against the bound (n+1)/sum_j p_j."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[1]
    p = pou.p_all(samples)
    bound = (n + 1.0) / p.sum(axis=1)
    g2 = np.zeros((samples.shape[0], pou.m))
    for axis in range(n):
        step = np.zeros(n)
        step[axis] = h
        drho = (pou.rho(samples + step) - pou.rho(samples - step)) / (2.0 * h)
        g2 += drho ** 2
    grads = np.sqrt(g2)
    ok = grads <= slack * bound[:, None]
    rate = float(ok.all(axis=1).mean())
    return {
        "pass_rate": rate,
        "max_ratio": float((grads / bound[:, None]).max()),
        "n_samples": int(samples.shape[0]),
    }


def local_polar_partition(geometry: str, theta) -> tuple[np.ndarray, np.ndarray]:
    """Angular two-subdomain partitions near a corner singular point.

    'lshape': a ramp 2 theta / pi on (0, pi/2), clamped.  'pentagon': the
    ramp 3/2 - 2 theta / pi on (pi/4, 3 pi/4), clamped.  Returns
    (rho_1, rho_2) with rho_1 + rho_2 = 1.
    """
    theta = np.asarray(theta, dtype=float)
    if geometry == "lshape":
        r1 = np.clip(2.0 * theta / np.pi, 0.0, 1.0)
    elif geometry == "pentagon":
        r1 = np.clip(1.5 - 2.0 * theta / np.pi, 0.0, 1.0)
    else:
        raise ValueError("geometry must be 'lshape' or 'pentagon'")
    return r1, 1.0 - r1


# ---------------------------------------------------------------------------
# harmonic extensions on the overlap square U12 = (0,1)^2


@dataclass
class HarmonicPair:
    """Grid fields on [0,1]^2: v1 carries the x=0 trace, v2 the y=0 trace."""

    v1: np.ndarray
    v2: np.ndarray
    n: int


@lru_cache(maxsize=4)
def _laplace_solver(n: int):
    m = n - 1
    eye = sps.identity(m, format="csr")
    lap1 = sps.diags([2.0 * np.ones(m), -np.ones(m - 1), -np.ones(m - 1)],
                     [0, 1, -1], format="csr")
    a = sps.kron(lap1, eye) + sps.kron(eye, lap1)
    return spla.splu(a.tocsc())


def _solve_dirichlet(n: int, boundary: np.ndarray) -> np.ndarray:
    """5-point Laplace solve on the (n+1)^2 grid with given boundary values."""
    m = n - 1
    rhs = np.zeros((m, m))
    rhs[0, :] += boundary[0, 1:n]
    rhs[-1, :] += boundary[n, 1:n]
    rhs[:, 0] += boundary[1:n, 0]
    rhs[:, -1] += boundary[1:n, n]
    sol = _laplace_solver(n).solve(rhs.reshape(-1))
    field = boundary.copy()
    field[1:n, 1:n] = sol.reshape(m, m)
    return field


def harmonic_extensions(g_left: np.ndarray, g_bottom: np.ndarray, n: int) -> HarmonicPair:
    """Discrete harmonic fields on the overlap square.

    g_left gives the trace on the edge x=0 (length n+1, zero endpoints),
    g_bottom the trace on y=0; each field is zero on the other three edges.
    """
    g_left = np.asarray(g_left, dtype=float)
    g_bottom = np.asarray(g_bottom, dtype=float)
    if g_left.shape != (n + 1,) or g_bottom.shape != (n + 1,):
        raise ValueError("boundary traces must have length n+1")
    for g in (g_left, g_bottom):
        if abs(g[0]) > 1e-12 or abs(g[-1]) > 1e-12:
            raise ValueError("traces must vanish at the shared domain corners")
    b1 = np.zeros((n + 1, n + 1))
    b1[0, :] = g_left
    b2 = np.zeros((n + 1, n + 1))
    b2[:, 0] = g_bottom
    return HarmonicPair(v1=_solve_dirichlet(n, b1), v2=_solve_dirichlet(n, b2), n=n)


def dirichlet_energy(v: np.ndarray) -> float:
    """Sum of squared edge differences (the 2D grid Dirichlet energy)."""
    dx = np.diff(v, axis=0)
    dy = np.diff(v, axis=1)
    return float((dx * dx).sum() + (dy * dy).sum())


def dirichlet_cross(v: np.ndarray, w: np.ndarray) -> float:
    return float((np.diff(v, axis=0) * np.diff(w, axis=0)).sum()
                 + (np.diff(v, axis=1) * np.diff(w, axis=1)).sum())


def _sine_trace(coeffs: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n + 1)
    out = np.zeros(n + 1)
    for k, c in enumerate(coeffs, start=1):
        out += c * np.sin(k * np.pi * t)
    return out


def xi_estimate(n: int = 128, n_data: int = 200, seed: int = 0,
                n_terms: int = 8) -> tuple[float, dict]:
    """Estimated squared equivalence constant of the two-box L-shape cover.

    For random interface data the minimal-decomposition energy ratio is
    R = (E1 + E2) / (E1 + E2 + C12) with E_i the energies of the harmonic
    extensions and C12 their cross energy; the estimate is max(1, max R) and
    the theory caps it at 2.
    """
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n_data):
        c1 = rng.uniform(-1.0, 1.0, size=n_terms)
        c2 = rng.uniform(-1.0, 1.0, size=n_terms)
        pair = harmonic_extensions(_sine_trace(c1, n), _sine_trace(c2, n), n)
        e1 = dirichlet_energy(pair.v1)
        e2 = dirichlet_energy(pair.v2)
        c12 = dirichlet_cross(pair.v1, pair.v2)
        ratios.append((e1 + e2) / (e1 + e2 + c12))
    estimate = max(1.0, float(np.max(ratios)))
    report = {
        "xi_sq_estimate": estimate,
        "grid_N": n,
        "n_data": n_data,
        "min_ratio": float(np.min(ratios)),
        "max_ratio": float(np.max(ratios)),
    }
    return estimate, report


# ---------------------------------------------------------------------------
# minimal-energy decomposition on the L-shape grid


def _lshape_region_energy(v: np.ndarray, n: int, region: str | None = None,
                          w: np.ndarray | None = None) -> float:
    """Edge energy over one region of the L-shape grid (or all of it).

    The grid is (2n+1)^2 over [-1,1]^2; index n is the coordinate 0.  Edges
    whose endpoints are both in [0,1]^2 belong to 'u12'; remaining edges with
    x <= 0 belong to 'u1' (y >= 0 there), with y <= 0 to 'u2'.  Third-
    quadrant edges are outside the domain and never counted.
    """
    if w is None:
        w = v
    dx = np.diff(v, axis=0) * np.diff(w, axis=0)  # edge (i -> i+1, j)
    dy = np.diff(v, axis=1) * np.diff(w, axis=1)  # edge (i, j -> j+1)
    hx = np.zeros_like(dx, dtype=bool)
    hy = np.zeros_like(dy, dtype=bool)
    if region in (None, "u12"):
        hx[n:, n:] = True          # i >= n so both endpoints have x >= 0
        hy[n:, n:] = True
    if region in (None, "u1"):
        hx[: n, n:] = True          # i+1 <= n: both endpoints x <= 0, y >= 0
        hy[: n, n:] = True
    if region in (None, "u2"):
        hx[n:, : n] = True
        hy[n:, : n] = True
    return float(dx[hx].sum() + dy[hy].sum())


@dataclass
class Decomposition:
    v1: np.ndarray
    v2: np.ndarray
    energy: float
    closed_form: float


def min_energy_decompose(v: np.ndarray, n: int) -> Decomposition:
    """Split an L-shape grid field into H^1_0 pieces on the two cover boxes.

    v is (2n+1)^2 over [-1,1]^2, zero on the domain boundary (and ignored in
    the third quadrant).  On the overlap square the split is
    v1 = (v + v1h - v2h)/2 where (v1h, v2h) are the harmonic extensions of
    the interface traces of v; elsewhere v1 = v on U1 and 0 on U2.
    """
    size = 2 * n + 1
    if v.shape != (size, size):
        raise ValueError("field must live on the (2n+1)^2 grid")
    g_left = v[n, n:]      # trace on x=0, y in [0,1]
    g_bottom = v[n:, n]    # trace on y=0, x in [0,1]
    pair = harmonic_extensions(np.asarray(g_left), np.asarray(g_bottom), n)
    v1 = np.zeros_like(v)
    v1[: n + 1, n:] = v[: n + 1, n:]                      # v on the U1 closure
    v1[n:, n:] = 0.5 * (v[n:, n:] + pair.v1 - pair.v2)    # overlap square
    v2 = np.zeros_like(v)
    v2[n:, :] = v[n:, :] - v1[n:, :]                      # U2 and the overlap
    energy = (_lshape_region_energy(v1, n) + _lshape_region_energy(v2, n))
    w = pair.v1 - pair.v2
    closed = (_lshape_region_energy(v, n)
              + 0.5 * (dirichlet_energy(w) - _lshape_region_energy(v, n, "u12")))
    return Decomposition(v1=v1, v2=v2, energy=energy, closed_form=closed)
