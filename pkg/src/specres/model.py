"""Candidate-solution network.

A small fully connected tanh network produces a raw scalar field; the actual
candidate is the raw field times a fixed cutoff that vanishes on the
essential boundary.  Spatial gradients are propagated exactly alongside the
values (forward accumulation of input tangents), and parameter gradients of
any functional of (value, gradient) samples are obtained by reverse
accumulation through the same tape.

The final linear layer has no bias and its weights are determined by a
least-squares solve at every training step, so the `trainable` parameter
slice excludes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Mlp",
    "CutoffSpec",
    "Tape",
    "forward_tape",
    "output_from_tape",
    "backward_from_tape",
    "forward_with_grad",
    "hidden_features",
    "save_params",
    "load_params",
]

_CHUNK = 1 << 18


class CutoffSpec:
    """Closed-form boundary factor: maps points to (value, gradient)."""

    def __init__(self, fn, name: str = "cutoff"):
        self._fn = fn
        self.name = name

    def __call__(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        chi, dchi = self._fn(np.atleast_2d(np.asarray(pts, dtype=float)))
        return np.asarray(chi, dtype=float), np.asarray(dchi, dtype=float)


class Mlp:
    """Architecture and flat parameter layout.

    ``widths = (n_in, h_1, ..., h_{L-1}, 1)``; hidden layers use tanh, the
    output layer is linear with its bias pinned to zero.  The flat layout is
    W_1, b_1, ..., W_{L-1}, b_{L-1}, w_out, so the trainable slice is simply
    ``flat[:-h_{L-1}]``.
    """

    def __init__(self, input_dim: int, hidden=(10, 10, 20)):
        self.widths = (int(input_dim),) + tuple(int(h) for h in hidden) + (1,)
        self._blocks: list[tuple[str, tuple[int, ...], int]] = []
        off = 0
        for j in range(1, len(self.widths) - 1):
            d_out, d_in = self.widths[j], self.widths[j - 1]
            self._blocks.append((f"W{j}", (d_out, d_in), off))
            off += d_out * d_in
            self._blocks.append((f"b{j}", (d_out,), off))
            off += d_out
        self._blocks.append(("w_out", (self.widths[-2],), off))
        off += self.widths[-2]
        self._size = off

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_features(self) -> int:
        """Width of the last hidden layer (the least-squares basis size)."""
        return self.widths[-2]

    @property
    def param_count(self) -> int:
        return self._size

    @property
    def trainable_count(self) -> int:
        return self._size - self.n_features

    def unflatten(self, flat: np.ndarray):
        """Views (W_j, b_j) per hidden layer plus the output weight vector."""
        flat = np.asarray(flat)
        if flat.size != self._size:
            raise ValueError(f"expected {self._size} parameters, got {flat.size}")
        ws, bs = [], []
        for name, shape, off in self._blocks[:-1]:
            arr = flat[off:off + int(np.prod(shape))].reshape(shape)
            (ws if name.startswith("W") else bs).append(arr)
        w_out = flat[-self.n_features:]
        return ws, bs, w_out

    def init_params(self, seed: int, scheme: str = "glorot_uniform") -> np.ndarray:
        if scheme != "glorot_uniform":
            raise ValueError(f"unknown init scheme {scheme!r}")
        rng = np.random.default_rng(seed)
        flat = np.zeros(self._size)
        ws, bs, w_out = self.unflatten(flat)
        for j, w in enumerate(ws):
            bound = math.sqrt(6.0 / (w.shape[1] + w.shape[0]))
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        bound = math.sqrt(6.0 / (self.n_features + 1))
        w_out[...] = rng.uniform(-bound, bound, size=w_out.shape)
        return flat

    def layout_header(self) -> dict:
        return {
            "widths": list(self.widths),
            "blocks": [{"name": n, "shape": list(s), "offset": o} for n, s, o in self._blocks],
        }


@dataclass
class Tape:
    """Forward state: activations A_j and their input tangents D_j per layer."""

    acts: list[np.ndarray]      # A_j, shape (Q, d_j); acts[0] is the input batch
    tangents: list[np.ndarray]  # D_j = dA_j/dx, shape (Q, d_j, n)


def _check_finite(flat: np.ndarray) -> None:
    if not np.all(np.isfinite(flat)):
        raise FloatingPointError("diverged parameters")


def forward_tape(mlp: Mlp, flat: np.ndarray, pts: np.ndarray) -> Tape:
    _check_finite(flat)
    ws, bs, _ = mlp.unflatten(flat)
    x = np.atleast_2d(np.asarray(pts, dtype=float))
    n = mlp.input_dim
    acts = [x]
    tangents = [np.broadcast_to(np.eye(n), (x.shape[0], n, n)).copy()]
    for w, b in zip(ws, bs):
        z = acts[-1] @ w.T + b
        a = np.tanh(z)
        t = np.matmul(tangents[-1].swapaxes(1, 2), w.T).swapaxes(1, 2)
        tangents.append((1.0 - a * a)[:, :, None] * t)
        acts.append(a)
    return Tape(acts=acts, tangents=tangents)


def output_from_tape(mlp: Mlp, flat: np.ndarray, tape: Tape) -> tuple[np.ndarray, np.ndarray]:
    """Raw network value and spatial gradient: (Q,), (Q, n)."""
    _, _, w_out = mlp.unflatten(flat)
    u = tape.acts[-1] @ w_out
    grad = np.einsum("qkn,k->qn", tape.tangents[-1], w_out)
    return u, grad


def backward_from_tape(mlp: Mlp, flat: np.ndarray, tape: Tape,
                       bar_u: np.ndarray, bar_grad: np.ndarray) -> np.ndarray:
    """Gradient of sum_q (bar_u[q] * u_raw[q] + bar_grad[q] . grad_raw[q])
    with respect to the trainable slice (w_out held fixed)."""
    ws, bs, w_out = mlp.unflatten(flat)
    g = np.zeros(mlp.param_count)
    g_ws, g_bs, _ = mlp.unflatten(g)

    bar_a = bar_u[:, None] * w_out[None, :]
    bar_d = bar_grad[:, None, :] * w_out[None, :, None]
    for j in range(len(ws) - 1, -1, -1):
        a_out, d_in = tape.acts[j + 1], tape.tangents[j]
        s = 1.0 - a_out * a_out
        # rebuild the pre-activation tangent T_j = W_j applied to D_{j-1}
        t = np.matmul(d_in.swapaxes(1, 2), ws[j].T).swapaxes(1, 2)
        bar_t = s[:, :, None] * bar_d
        bar_s = np.einsum("qon,qon->qo", bar_d, t)
        bar_a = bar_a - 2.0 * a_out * bar_s
        bar_z = s * bar_a
        g_ws[j][...] = bar_z.T @ tape.acts[j] + np.einsum("qon,qkn->ok", bar_t, d_in)
        g_bs[j][...] = bar_z.sum(axis=0)
        if j > 0:
            bar_a = bar_z @ ws[j]
            bar_d = np.matmul(bar_t.swapaxes(1, 2), ws[j]).swapaxes(1, 2)
    return g[:mlp.trainable_count]


def forward_with_grad(mlp: Mlp, flat: np.ndarray, cutoff: CutoffSpec,
                      pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Candidate field u = chi * u_raw and its gradient, chunked over points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    us, gs = [], []
    for lo in range(0, pts.shape[0], _CHUNK):
        chunk = pts[lo:lo + _CHUNK]
        tape = forward_tape(mlp, flat, chunk)
        u_raw, g_raw = output_from_tape(mlp, flat, tape)
        chi, dchi = cutoff(chunk)
        us.append(chi * u_raw)
        gs.append(chi[:, None] * g_raw + u_raw[:, None] * dchi)
    return np.concatenate(us), np.vstack(gs)


def hidden_features(mlp: Mlp, flat: np.ndarray, cutoff: CutoffSpec,
                    pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The cutoff-weighted last-hidden-layer fields and their gradients.

    These are the candidate functions whose span the output-layer
    least-squares solve optimizes over: shapes (Q, F) and (Q, F, n).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    tape = forward_tape(mlp, flat, pts)
    chi, dchi = cutoff(pts)
    feat = chi[:, None] * tape.acts[-1]
    gfeat = chi[:, None, None] * tape.tangents[-1] + tape.acts[-1][:, :, None] * dchi[:, None, :]
    return feat, gfeat


def save_params(mlp: Mlp, flat: np.ndarray, path) -> None:
    """Flat float64 binary plus a JSON layout header next to it."""
    path = Path(path)
    np.asarray(flat, dtype=float).tofile(path.with_suffix(".bin"))
    path.with_suffix(".json").write_text(json.dumps(mlp.layout_header(), indent=2))


def load_params(mlp: Mlp, path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if tuple(header["widths"]) != mlp.widths:
        raise ValueError("layout header does not match this architecture")
    flat = np.fromfile(path.with_suffix(".bin"), dtype=float)
    if flat.size != mlp.param_count:
        raise ValueError("parameter file has the wrong size")
    return flat
