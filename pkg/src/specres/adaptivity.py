"""Automatic local refinement of the test-space decomposition (1D).

After each training phase, every active subdomain proposes its three
half-width children; each candidate child is equipped with a small Dirichlet
mode set and the training quadrature restricted to it, and its local loss
contribution serves as the error indicator.  Children above a fixed fraction
of the largest indicator join the cover, and training resumes with the
parameters carried over.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import BoxDomain, Cover, subdivide
from .optimizer import RunSetup, TrainSchedule, TrainState, train
from .quadrature import restrict
from .residual import TestBlock

__all__ = [
    "RefinementConfig",
    "IndicatorTable",
    "indicators",
    "mark",
    "refine_loop",
]


@dataclass(frozen=True)
class RefinementConfig:
    tau: float = 0.66
    max_ref: int = 5
    modes_per_child: int = 5
    level_iterations: int = 500
    final_iterations: int | None = None  # defaults to level_iterations

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.max_ref < 0:
            raise ValueError("max_ref must be >= 0")


@dataclass
class IndicatorTable:
    """epsilon_{i,j}: local loss of candidate child j of parent box i."""

    entries: dict[tuple[int, int], float]
    children: dict[tuple[int, int], BoxDomain]

    def to_csv(self, path) -> None:
        lines = ["parent_id,child_index,epsilon"]
        for (pid, ci) in sorted(self.entries):
            lines.append(f"{pid},{ci},{self.entries[(pid, ci)]!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def candidate_blocks(setup: RunSetup, box: BoxDomain, config: RefinementConfig):
    """The three child blocks of one box, on the restricted training rule."""
    out = []
    for ci, child in enumerate(subdivide(box)):
        rule = restrict(setup.base_train_rule, child)
        out.append((ci, child, TestBlock(child, config.modes_per_child, rule, f=setup.f)))
    return out


def indicators(setup: RunSetup, flat: np.ndarray, config: RefinementConfig) -> IndicatorTable:
    """Local loss of every candidate child of every active box."""
    entries: dict[tuple[int, int], float] = {}
    children: dict[tuple[int, int], BoxDomain] = {}
    u_eval = setup.u_eval(flat)
    for box in setup.cover.boxes:
        for ci, child, blk in candidate_blocks(setup, box, config):
            _, grad = u_eval(blk.nodes)
            r = blk.residual_vector(grad)
            entries[(box.id, ci)] = float(r @ r)
            children[(box.id, ci)] = child
    return IndicatorTable(entries=entries, children=children)


def mark(table: IndicatorTable, tau: float) -> list[tuple[int, int]]:
    """Keys with epsilon strictly above tau times the largest epsilon."""
    if not table.entries:
        raise ValueError("empty indicator table")
    top = max(table.entries.values())
    return [k for k in sorted(table.entries) if table.entries[k] > tau * top]


def _already_covered(cover: Cover, child: BoxDomain) -> bool:
    a, b = child.interval()
    for box in cover.boxes:
        lo, hi = box.interval()
        if abs(lo - a) < 1e-12 and abs(hi - b) < 1e-12:
            return True
    return False


def refine_loop(setup: RunSetup, config: RefinementConfig,
                schedule: TrainSchedule | None = None):
    """Train / estimate / extend, ``max_ref`` times, then a final training.

    Returns (state, history, cover_snapshots) where ``cover_snapshots[q]``
    is the list of boxes active during level q.  The network parameters and
    optimizer moments persist across levels; a marked child is skipped if an
    identical interval is already in the cover.
    """
    if setup.cover.dim != 1:
        raise ValueError("automatic refinement is implemented for 1D covers only")
    if schedule is None:
        schedule = setup.default_schedule()
    state: TrainState | None = None
    history: list[tuple] = []
    snapshots: list[list[BoxDomain]] = []
    final_iters = config.final_iterations or config.level_iterations
    for level in range(config.max_ref + 1):
        snapshots.append(list(setup.cover.boxes))
        iters = final_iters if level == config.max_ref else config.level_iterations
        level_schedule = replace(schedule, iterations=iters)
        state, rows = train(setup, level_schedule, state=state,
                            record_initial=(level == 0))
        history.extend(rows)
        if level == config.max_ref:
            break
        table = indicators(setup, state.flat, config)
        for key in mark(table, config.tau):
            child = table.children[key]
            if _already_covered(setup.cover, child):
                continue
            child = setup.cover.add_box(child)
            blk = TestBlock(child, config.modes_per_child,
                            restrict(setup.base_train_rule, child), f=setup.f)
            setup.groups[0].add_block(blk)
            if setup.val_groups:
                vblk = TestBlock(child, config.modes_per_child,
                                 restrict(setup.base_val_rule, child), f=setup.f)
                setup.val_groups[0].add_block(vblk)
    return state, history, snapshots
