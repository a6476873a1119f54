"""Hybrid trainer: least-squares output layer + Adam on the hidden layers.

Every iteration solves the linear least-squares problem for the output-layer
weights (the residual pairings are linear in them), then takes one Adam step
on the remaining parameters using the exact gradient of the discrete loss.
The output weights are treated as constants during that gradient; the solve
is not differentiated through.

Network evaluation is organized in *evaluation groups*: one forward pass per
distinct quadrature point set, shared by every box whose rule is a
restriction of it, so overlapping subdomains never re-evaluate the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Cover
from .model import CutoffSpec, Mlp, backward_from_tape, forward_tape, forward_with_grad, output_from_tape
from .quadrature import QuadratureRule
from .residual import LossBreakdown, TestBlock

__all__ = [
    "TrainingDiverged",
    "AdamState",
    "LsSystem",
    "TrainSchedule",
    "TrainState",
    "EvalGroup",
    "Stage",
    "RunSetup",
    "assemble_ls",
    "ls_solve",
    "adam_step",
    "loss_and_system",
    "loss_gradient",
    "train",
]

_CHUNK = 1 << 18


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def fresh(size: int, lr: float) -> "AdamState":
        return AdamState(m=np.zeros(size), v=np.zeros(size), lr=lr)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Standard bias-corrected update; mutates the moment buffers."""
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class LsSystem:
    """min_w |a w - b| over the output weights; rows sorted by (box, mode)."""

    a: np.ndarray
    b: np.ndarray
    row_slices: dict[int, slice]  # box id -> its rows

    def default_ridge(self, ridge_rel: float) -> float:
        if ridge_rel == 0.0:
            return 0.0
        return ridge_rel * float(np.einsum("ij,ij->", self.a, self.a)) / self.a.shape[1]


def ls_solve(system: LsSystem, ridge: float = 0.0) -> np.ndarray:
    """w = (A^T A + ridge I)^{-1} A^T b, computed via an augmented QR solve."""
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    a, b = system.a, system.b
    cols = a.shape[1]
    if ridge == 0.0:
        w, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
        if rank < cols:
            raise np.linalg.LinAlgError("rank-deficient feature matrix; increase ridge")
        # one step of iterative refinement tightens A^T (A w - b) toward zero
        w = w + np.linalg.lstsq(a, b - a @ w, rcond=None)[0]
        return w
    aug = np.vstack([a, math.sqrt(ridge) * np.eye(cols)])
    rhs = np.concatenate([b, np.zeros(cols)])
    return np.linalg.lstsq(aug, rhs, rcond=None)[0]


class EvalGroup:
    """Blocks sharing one quadrature point set (one network pass per group)."""

    def __init__(self, rule: QuadratureRule, cutoff: CutoffSpec):
        self.rule = rule
        self.nodes = rule.nodes()
        self.chi, self.dchi = cutoff(self.nodes)
        self.blocks: list[TestBlock] = []
        self.index: list[np.ndarray] = []

    def add_block(self, blk: TestBlock) -> None:
        if not (np.allclose(blk.rule.corner, self.rule.corner)
                and np.allclose(blk.rule.unit_axes, self.rule.unit_axes)):
            raise ValueError("block rule is not aligned with the group rule")
        axis_idx = []
        for (bs, _), (gs, _) in zip(blk.rule.axes, self.rule.axes):
            pos = np.searchsorted(gs, bs)
            pos = np.clip(pos, 0, gs.size - 1)
            left = np.clip(pos - 1, 0, gs.size - 1)
            pos = np.where(np.abs(gs[left] - bs) < np.abs(gs[pos] - bs), left, pos)
            if not np.allclose(gs[pos], bs, rtol=0.0, atol=1e-9):
                raise ValueError("block nodes are not a subset of the group nodes")
            axis_idx.append(pos)
        if len(axis_idx) == 1:
            flat = axis_idx[0]
        else:
            q2 = self.rule.counts[1]
            flat = (axis_idx[0][:, None] * q2 + axis_idx[1][None, :]).reshape(-1)
        self.blocks.append(blk)
        self.index.append(flat)


@dataclass
class Stage:
    """Cover additions that fire after a given training iteration."""

    at_iteration: int
    boxes: list = field(default_factory=list)
    train_additions: list[tuple[int, TestBlock]] = field(default_factory=list)
    val_additions: list[tuple[int, TestBlock]] = field(default_factory=list)


@dataclass
class RunSetup:
    """Everything the trainer needs for one configured problem."""

    name: str
    mlp: Mlp
    cutoff: CutoffSpec
    cover: Cover
    groups: list[EvalGroup]
    val_groups: list[EvalGroup]
    error_fn: object = None           # callable(u_eval) -> percentage
    f: object = None                  # source term, for building new blocks
    base_train_rule: QuadratureRule | None = None
    base_val_rule: QuadratureRule | None = None
    stages: list[Stage] = field(default_factory=list)
    lr: float = 1e-2
    iterations: int = 1000
    seed: int = 0
    val_every: int = 1
    error_every: int = 1
    ridge_rel: float = 1e-10

    def default_schedule(self, **overrides) -> "TrainSchedule":
        kw = dict(iterations=self.iterations, lr=self.lr, seed=self.seed,
                  val_every=self.val_every, error_every=self.error_every,
                  ridge_rel=self.ridge_rel)
        kw.update(overrides)
        return TrainSchedule(**kw)

    def apply_stage(self, stage: Stage) -> None:
        for box in stage.boxes:
            self.cover.add_box(box)
        for gi, blk in stage.train_additions:
            self.groups[gi].add_block(blk)
        for gi, blk in stage.val_additions:
            self.val_groups[gi].add_block(blk)

    def all_blocks(self) -> list[TestBlock]:
        return [blk for g in self.groups for blk in g.blocks]

    def u_eval(self, flat: np.ndarray):
        return lambda pts: forward_with_grad(self.mlp, flat, self.cutoff, pts)


@dataclass
class TrainSchedule:
    iterations: int
    lr: float
    seed: int = 0
    val_every: int = 1
    error_every: int = 1
    ridge_rel: float = 1e-10


@dataclass
class TrainState:
    flat: np.ndarray
    adam: AdamState
    iteration: int = 0


class _Evaluation:
    """One forward pass over all groups: tapes, LS system, residuals, loss."""

    def __init__(self, setup: RunSetup, flat: np.ndarray):
        self.flat = flat
        self.tapes = []
        per_block = []
        for group in setup.groups:
            tape = forward_tape(setup.mlp, flat, group.nodes)
            feat_raw = tape.acts[-1]
            gfeat = (group.chi[:, None, None] * tape.tangents[-1]
                     + feat_raw[:, :, None] * group.dchi[:, None, :])
            self.tapes.append(tape)
            for blk, idx in zip(group.blocks, group.index):
                per_block.append((blk.box.id, blk, blk.feature_matrix(gfeat[idx])))
        per_block.sort(key=lambda t: t[0])
        rows = {}
        lo = 0
        mats, rhs = [], []
        for box_id, blk, a in per_block:
            rows[box_id] = slice(lo, lo + blk.n_modes)
            lo += blk.n_modes
            mats.append(a)
            rhs.append(blk.ell)
        self.system = LsSystem(a=np.vstack(mats), b=np.concatenate(rhs), row_slices=rows)
        self.w: np.ndarray | None = None
        self.residuals: dict[int, np.ndarray] = {}
        self.breakdown: LossBreakdown | None = None

    def solve(self, ridge: float) -> None:
        self.w = ls_solve(self.system, ridge)
        r_all = self.system.a @ self.w - self.system.b
        per_box = {}
        for box_id, sl in self.system.row_slices.items():
            r = r_all[sl]
            self.residuals[box_id] = r
            per_box[box_id] = float(r @ r)
        total = float(np.sum(np.array([per_box[i] for i in sorted(per_box)])))
        if not np.isfinite(total):
            raise TrainingDiverged("non-finite training loss")
        self.breakdown = LossBreakdown(per_box=per_box, total=total, role="training")

    def gradient(self, setup: RunSetup) -> np.ndarray:
        if self.w is None:
            raise RuntimeError("solve the output layer before taking gradients")
        # the backward pass must see the solved output weights, since the
        # residual seeds flow through u = features @ w
        flat = self.flat.copy()
        _, _, w_out = setup.mlp.unflatten(flat)
        w_out[...] = self.w
        grad = np.zeros(setup.mlp.trainable_count)
        for group, tape in zip(setup.groups, self.tapes):
            seeds = np.zeros_like(group.nodes)
            for blk, idx in zip(group.blocks, group.index):
                seeds[idx] += blk.gradient_seeds(self.residuals[blk.box.id])
            bar_u = np.einsum("qn,qn->q", seeds, group.dchi)
            bar_g = group.chi[:, None] * seeds
            grad += backward_from_tape(setup.mlp, flat, tape, bar_u, bar_g)
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged("diverged: non-finite gradient")
        return grad


def loss_and_system(setup: RunSetup, flat: np.ndarray, ridge: float | None = None,
                    ridge_rel: float = 1e-10) -> tuple[LossBreakdown, LsSystem, np.ndarray]:
    """Assemble, solve the output layer, and evaluate the training loss."""
    ev = _Evaluation(setup, flat)
    ev.solve(ev.system.default_ridge(ridge_rel) if ridge is None else ridge)
    return ev.breakdown, ev.system, ev.w


def assemble_ls(setup: RunSetup, flat: np.ndarray) -> LsSystem:
    ev = _Evaluation(setup, flat)
    return ev.system


def loss_at(setup: RunSetup, flat: np.ndarray, w: np.ndarray) -> float:
    """Training loss with the output weights pinned to ``w`` (no LS solve)."""
    ev = _Evaluation(setup, flat)
    r = ev.system.a @ w - ev.system.b
    return float(r @ r)


def loss_gradient(setup: RunSetup, flat: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact gradient of the loss over the trainable slice, w held fixed."""
    ev = _Evaluation(setup, flat)
    ev.w = np.asarray(w, dtype=float)
    r_all = ev.system.a @ ev.w - ev.system.b
    for box_id, sl in ev.system.row_slices.items():
        ev.residuals[box_id] = r_all[sl]
    return ev.gradient(setup)


def validation_loss(setup: RunSetup, flat: np.ndarray) -> LossBreakdown:
    per_box = {}
    for group in setup.val_groups:
        grads = np.empty_like(group.nodes)
        for lo in range(0, group.nodes.shape[0], _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            tape = forward_tape(setup.mlp, flat, group.nodes[sl])
            u_raw, g_raw = output_from_tape(setup.mlp, flat, tape)
            grads[sl] = (group.chi[sl, None] * g_raw
                         + u_raw[:, None] * group.dchi[sl])
        for blk, idx in zip(group.blocks, group.index):
            r = blk.residual_vector(grads[idx])
            per_box[blk.box.id] = float(r @ r)
    total = float(np.sum(np.array([per_box[i] for i in sorted(per_box)])))
    return LossBreakdown(per_box=per_box, total=total, role="validation")


def train(setup: RunSetup, schedule: TrainSchedule,
          state: TrainState | None = None,
          record_initial: bool = True) -> tuple[TrainState, list[tuple]]:
    """Run the LS/Adam loop; returns the final state and history rows.

    History rows are (iteration, train_loss, val_loss, rel_h1_error_pct);
    validation and error columns repeat their last computed value between
    cadence points.  An existing state warm-starts (parameters, moments and
    the iteration counter persist), in which case the initial evaluation row
    is normally suppressed.
    """
    if state is None:
        flat = setup.mlp.init_params(schedule.seed)
        state = TrainState(flat=flat,
                           adam=AdamState.fresh(setup.mlp.trainable_count, schedule.lr))
    state.adam.lr = schedule.lr
    stages = {s.at_iteration: s for s in setup.stages}

    history: list[tuple] = []
    last_val = math.nan
    last_err = math.nan

    def evaluate() -> _Evaluation:
        ev = _Evaluation(setup, state.flat)
        ev.solve(ev.system.default_ridge(schedule.ridge_rel))
        ws, bs, w_out = setup.mlp.unflatten(state.flat)
        w_out[...] = ev.w
        return ev

    def log_row(it: int) -> None:
        nonlocal last_val, last_err
        if setup.val_groups and (it % schedule.val_every == 0 or it == end):
            last_val = validation_loss(setup, state.flat).total
        if setup.error_fn is not None and (it % schedule.error_every == 0 or it == end):
            last_err = float(setup.error_fn(setup.u_eval(state.flat)))
        history.append((it, ev.breakdown.total, last_val, last_err))

    end = state.iteration + schedule.iterations
    ev = evaluate()
    if record_initial:
        log_row(state.iteration)
    if state.iteration in stages:
        setup.apply_stage(stages[state.iteration])
        ev = evaluate()
    for _ in range(schedule.iterations):
        grad = ev.gradient(setup)
        theta = adam_step(state.adam, state.flat[:setup.mlp.trainable_count], grad)
        state.flat = np.concatenate([theta, state.flat[setup.mlp.trainable_count:]])
        state.iteration += 1
        ev = evaluate()
        log_row(state.iteration)
        if state.iteration in stages and state.iteration < end:
            setup.apply_stage(stages[state.iteration])
            ev = evaluate()
    return state, history
