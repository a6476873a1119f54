"""Overlapping covers of (possibly rotated) rectangles.

A domain is represented as the union of a designated set of *base* boxes.
Further boxes (children produced by refinement, or ad-hoc additions) may be
appended to the cover; each box carries its own boundary tags so that the
test space attached to it knows where its members must vanish.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "FaceBC",
    "BoxDomain",
    "Cover",
    "local_coords",
    "local_coords_batch",
    "make_hat_cover",
    "subdivide",
]

_ORTHO_TOL = 1e-12


class FaceBC(str, Enum):
    DIRICHLET = "dirichlet"
    FREE = "free"


@dataclass(frozen=True)
class BoxDomain:
    """An open n-rectangle given by a corner and orthogonal edge vectors.

    Faces are indexed ``2*axis`` (the face through ``corner``) and
    ``2*axis + 1`` (the opposite face).  ``id == -1`` marks a box that has
    not yet been inserted into a cover.
    """

    id: int
    corner: np.ndarray
    edge_vectors: np.ndarray  # shape (n, n), row j spans axis j
    face_bc: tuple[FaceBC, ...]
    level: int = 0
    parent: int | None = None

    def __post_init__(self):
        corner = np.asarray(self.corner, dtype=float)
        edges = np.asarray(self.edge_vectors, dtype=float)
        if edges.ndim != 2 or edges.shape[0] != edges.shape[1] or edges.shape[0] != corner.size:
            raise ValueError("edge_vectors must be (n, n) matching the corner dimension")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "edge_vectors", edges)
        object.__setattr__(self, "face_bc", tuple(FaceBC(t) for t in self.face_bc))
        if len(self.face_bc) != 2 * self.dim:
            raise ValueError("need one boundary tag per face")
        lengths = self.side_lengths
        if np.any(lengths <= 0.0):
            raise ValueError("all side lengths must be strictly positive")
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                dot = abs(float(edges[i] @ edges[j]))
                if dot > _ORTHO_TOL * lengths[i] * lengths[j]:
                    raise ValueError("edge vectors must be pairwise orthogonal")
        if self.level < 0:
            raise ValueError("level must be >= 0")

    @property
    def dim(self) -> int:
        return self.corner.size

    @property
    def side_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @property
    def unit_axes(self) -> np.ndarray:
        """Rows are the unit vectors along each edge."""
        return self.edge_vectors / self.side_lengths[:, None]

    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    def interval(self) -> tuple[float, float]:
        """1D convenience: the (a, b) endpoints."""
        if self.dim != 1:
            raise ValueError("interval() is only defined for 1D boxes")
        a = float(self.corner[0])
        return a, a + float(self.edge_vectors[0, 0])

    def vertices(self) -> np.ndarray:
        """All 2^n corner points, shape (2^n, n)."""
        n = self.dim
        out = []
        for mask in range(2 ** n):
            t = np.array([(mask >> j) & 1 for j in range(n)], dtype=float)
            out.append(self.corner + t @ self.edge_vectors)
        return np.array(out)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "parent": self.parent,
            "corner": self.corner.tolist(),
            "edges": self.edge_vectors.tolist(),
            "face_bc": [t.value for t in self.face_bc],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "BoxDomain":
        return BoxDomain(
            id=d["id"],
            corner=np.asarray(d["corner"], dtype=float),
            edge_vectors=np.asarray(d["edges"], dtype=float),
            face_bc=tuple(FaceBC(t) for t in d["face_bc"]),
            level=d["level"],
            parent=d["parent"],
        )


def axis_box(lo, hi, face_bc=None, box_id: int = 0, level: int = 0,
             parent: int | None = None) -> BoxDomain:
    """Axis-aligned box from per-axis (lo, hi) bounds."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    if face_bc is None:
        face_bc = (FaceBC.DIRICHLET,) * (2 * n)
    return BoxDomain(
        id=box_id,
        corner=lo,
        edge_vectors=np.diag(hi - lo),
        face_bc=face_bc,
        level=level,
        parent=parent,
    )


def local_coords(box: BoxDomain, x) -> tuple[np.ndarray, bool]:
    """Map a point to unit-cube coordinates t with x = corner + t @ edges.

    Returns (t, inside); points on the boundary count as outside.
    """
    t, inside = local_coords_batch(box, np.asarray(x, dtype=float)[None, :])
    return t[0], bool(inside[0])


def local_coords_batch(box: BoxDomain, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    rel = x - box.corner
    # orthogonal edges: t_j = rel . e_j / |e_j|^2
    lengths2 = np.sum(box.edge_vectors ** 2, axis=1)
    t = (rel @ box.edge_vectors.T) / lengths2
    inside = np.all((t > 0.0) & (t < 1.0), axis=1)
    return t, inside


@dataclass
class Cover:
    """Boxes covering a domain; the union of the base boxes *is* the domain."""

    boxes: list[BoxDomain]
    base_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.base_ids:
            self.base_ids = tuple(b.id for b in self.boxes)
        ids = [b.id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise ValueError("box ids must be unique")

    @property
    def dim(self) -> int:
        return self.boxes[0].dim

    def box_by_id(self, box_id: int) -> BoxDomain:
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise KeyError(f"no box with id {box_id}")

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership in the open domain (union of base boxes), batched."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.zeros(x.shape[0], dtype=bool)
        for b in self.boxes:
            if b.id in self.base_ids:
                inside |= local_coords_batch(b, x)[1]
        return inside

    def overlap_count(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        count = np.zeros(x.shape[0], dtype=int)
        for b in self.boxes:
            count += local_coords_batch(b, x)[1]
        return count

    def max_overlap(self, n_samples: int = 4096, seed: int = 0) -> int:
        """Sampled overlap constant: max number of boxes containing a point."""
        rng = np.random.default_rng(seed)
        pts = []
        for b in self.boxes:
            t = rng.uniform(0.0, 1.0, size=(max(1, n_samples // len(self.boxes)), b.dim))
            pts.append(b.corner + t @ b.edge_vectors)
        return int(self.overlap_count(np.vstack(pts)).max())

    def next_id(self) -> int:
        return max(b.id for b in self.boxes) + 1

    def add_box(self, box: BoxDomain) -> BoxDomain:
        """Insert a box, assigning a fresh id if it carries the -1 marker."""
        if box.id == -1:
            box = replace(box, id=self.next_id())
        if any(b.id == box.id for b in self.boxes):
            raise ValueError(f"duplicate box id {box.id}")
        self.boxes.append(box)
        return box

    def to_json(self) -> str:
        return json.dumps([b.to_json_dict() for b in self.boxes], indent=2)

    @staticmethod
    def from_json(text: str, base_ids: tuple[int, ...] = ()) -> "Cover":
        boxes = [BoxDomain.from_json_dict(d) for d in json.loads(text)]
        return Cover(boxes=boxes, base_ids=base_ids or tuple(b.id for b in boxes))


def make_hat_cover(knots, bc: tuple[FaceBC, FaceBC] = (FaceBC.DIRICHLET, FaceBC.DIRICHLET)) -> Cover:
    """Cover of (knots[0], knots[-1]) by the supports of interior hat functions.

    One box per interior knot x_i, equal to (x_{i-1}, x_{i+1}).  Faces that
    coincide with the global endpoints inherit the endpoint tags; interior
    faces are Dirichlet because supported functions vanish there.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.size < 3 or np.any(np.diff(knots) <= 0.0):
        raise ValueError("degenerate partition: need >= 3 strictly increasing knots")
    boxes = []
    for i in range(1, knots.size - 1):
        lo, hi = knots[i - 1], knots[i + 1]
        left = FaceBC(bc[0]) if i - 1 == 0 else FaceBC.DIRICHLET
        right = FaceBC(bc[1]) if i + 1 == knots.size - 1 else FaceBC.DIRICHLET
        boxes.append(axis_box([lo], [hi], face_bc=(left, right), box_id=i - 1, level=0))
    return Cover(boxes=boxes)


def subdivide(box: BoxDomain) -> list[BoxDomain]:
    """Three half-width children of a 1D interval (a,b).

    The children are (a, m), (q1, q3), (m, b) with m the midpoint and q1, q3
    the quartile points, i.e. the hat supports of the refined partition.
    Children get the unassigned id marker -1 and full Dirichlet tags.
    """
    if box.dim != 1:
        raise ValueError("unsupported dimension: only 1D boxes are subdivided")
    a, b = box.interval()
    m = 0.5 * (a + b)
    q1 = 0.25 * (3.0 * a + b)
    q3 = 0.25 * (a + 3.0 * b)
    bounds = [(a, m), (q1, q3), (m, b)]
    return [
        axis_box([lo], [hi], box_id=-1, level=box.level + 1, parent=box.id)
        for lo, hi in bounds
    ]
