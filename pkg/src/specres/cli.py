"""Batch front-end: configure a catalog case, train, and dump artifacts.

    specres run --case case4 --seed 1 --out runs/case4
    specres run --verify lshape-xi --out runs/verify
    specres compare runs/case4 runs/case4-ref --out summary.csv

A run directory receives history.csv (iteration, train_loss, val_loss,
rel_h1_error_pct), cover_level_<q>.json snapshots, solution.csv on the
overkill error grid, and config_resolved.json, which is sufficient to
reproduce the run bit for bit on one platform.

Exit codes: 0 success, 2 invalid configuration, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptivity import refine_loop
from .geometry import Cover
from .optimizer import TrainingDiverged, train
from .problems import CASES

HISTORY_COLUMNS = ("iteration", "train_loss", "val_loss", "rel_h1_error_pct")

_CONFIG_KEYS = ("case", "seed", "lr", "iterations", "tau", "max_ref", "modes",
                "quad_points", "ridge", "val_every", "error_every", "out", "verify")


class ConfigError(ValueError):
    pass


def _parse_counts(text):
    if text is None:
        return None
    try:
        return tuple(int(t) for t in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse counts {text!r}") from exc


def _write_history(path: Path, rows) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for it, tr, val, err in rows:
        lines.append(f"{it},{tr!r},{val!r},{err!r}")
    path.write_text("\n".join(lines) + "\n")


def read_history(path) -> list[tuple]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != HISTORY_COLUMNS:
            raise ConfigError(f"unexpected history columns in {path}")
        for line in fh:
            it, tr, val, err = line.strip().split(",")
            rows.append((int(it), float(tr), float(val), float(err)))
    return rows


def _write_cover(path: Path, boxes) -> None:
    path.write_text(Cover(boxes=list(boxes)).to_json() + "\n")


def _resolve_config(args) -> dict:
    cfg = {k: None for k in _CONFIG_KEYS}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["verify"] is None and cfg["case"] is None:
        raise ConfigError("need --case or --verify")
    if cfg["case"] is not None and cfg["case"] not in CASES:
        raise ConfigError(f"unknown case {cfg['case']!r}; choices: {sorted(CASES)}")
    if cfg["tau"] is not None and not 0.0 < cfg["tau"] <= 1.0:
        raise ConfigError("tau must lie in (0, 1]")
    for key in ("iterations", "max_ref"):
        if cfg[key] is not None and cfg[key] < 0:
            raise ConfigError(f"{key} must be >= 0")
    for key in ("modes", "quad_points"):
        if cfg[key] is not None and any(c < 1 for c in cfg[key]):
            raise ConfigError(f"{key} must be positive")
    if cfg["out"] is None:
        raise ConfigError("need --out directory")
    return cfg


def run_verification(kind: str, out: Path) -> dict:
    from . import equivalence as eq
    from .problems import case4

    report: dict = {}
    if kind in ("lshape-xi", "partition"):
        lsp = eq.lshape_partition()
        pent = eq.pentagon_partition()
        report["singular_points"] = {
            "lshape": eq.find_singular_points(lsp),
            "pentagon": eq.find_singular_points(pent),
        }
        rng = np.random.default_rng(0)
        samples = []
        while len(samples) < 2000:
            cand = rng.uniform([-1.0, -1.0], [1.0, 1.0], size=(4000, 2))
            keep = lsp.cover.contains(cand)
            cand = cand[keep]
            cand = cand[np.linalg.norm(cand, axis=1) > 1e-3]
            samples.extend(cand.tolist())
        samples = np.array(samples[:2000])
        report["grad_bound_pass_rate"] = eq.grad_bound_check(lsp, samples)["pass_rate"]
        rho_sum = lsp.rho(samples).sum(axis=1)
        report["partition_identity_max_dev"] = float(np.abs(rho_sum - 1.0).max())
    if kind == "lshape-xi":
        est, xi_rep = eq.xi_estimate(n=128, n_data=200, seed=0)
        report["xi_sq_estimate"] = est
        report["grid_N"] = xi_rep["grid_N"]
    if kind == "gradcheck":
        from .optimizer import loss_and_system, loss_at, loss_gradient

        setup = case4().build()
        worst = 0.0
        for seed in range(3):
            flat = setup.mlp.init_params(seed)
            _, _, w = loss_and_system(setup, flat)
            grad = loss_gradient(setup, flat, w)
            rng = np.random.default_rng(seed)
            idx = rng.choice(setup.mlp.trainable_count, size=10, replace=False)
            fd = np.zeros(idx.size)
            for col, i in enumerate(idx):
                h = 1e-5
                fp = flat.copy()
                fp[i] += h
                fm = flat.copy()
                fm[i] -= h
                fd[col] = (loss_at(setup, fp, w) - loss_at(setup, fm, w)) / (2 * h)
            rel = np.linalg.norm(fd - grad[idx]) / np.linalg.norm(fd)
            worst = max(worst, float(rel))
        report["gradcheck_max_rel_err"] = worst
        report["gradcheck_pass"] = worst <= 1e-5
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def run(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg)

    if cfg["verify"]:
        (out / "config_resolved.json").write_text(json.dumps(resolved, indent=2) + "\n")
        run_verification(cfg["verify"], out)
        return 0

    spec = CASES[cfg["case"]]()
    setup = spec.build(modes=cfg["modes"], quad_points=cfg["quad_points"],
                       lr=cfg["lr"], iterations=cfg["iterations"], seed=cfg["seed"],
                       val_every=cfg["val_every"], error_every=cfg["error_every"],
                       ridge_rel=cfg["ridge"])
    refinement = spec.refinement
    if refinement is not None:
        if cfg["tau"] is not None:
            refinement = replace(refinement, tau=cfg["tau"])
        if cfg["max_ref"] is not None:
            refinement = replace(refinement, max_ref=cfg["max_ref"])
        if cfg["iterations"] is not None:
            refinement = replace(refinement, level_iterations=cfg["iterations"],
                                 final_iterations=cfg["iterations"])

    for key, default in (("seed", setup.seed), ("lr", setup.lr),
                         ("iterations", setup.iterations),
                         ("val_every", setup.val_every),
                         ("error_every", setup.error_every),
                         ("ridge", setup.ridge_rel)):
        if resolved[key] is None:
            resolved[key] = default
    if refinement is not None:
        resolved.setdefault("tau", None)
        if resolved["tau"] is None:
            resolved["tau"] = refinement.tau
        if resolved["max_ref"] is None:
            resolved["max_ref"] = refinement.max_ref
    (out / "config_resolved.json").write_text(json.dumps(resolved, indent=2) + "\n")

    schedule = setup.default_schedule()
    if refinement is not None:
        state, history, snapshots = refine_loop(setup, refinement, schedule)
        for q, boxes in enumerate(snapshots):
            _write_cover(out / f"cover_level_{q}.json", boxes)
    else:
        staged_ids = [set(b.id for b in s.boxes) for s in setup.stages]
        state, history = train(setup, schedule)
        base = [b for b in setup.cover.boxes
                if all(b.id not in ids for ids in staged_ids)]
        _write_cover(out / "cover_level_0.json", base)
        for q, ids in enumerate(staged_ids, start=1):
            base = base + [b for b in setup.cover.boxes if b.id in ids]
            _write_cover(out / f"cover_level_{q}.json", base)

    _write_history(out / "history.csv", history)
    if setup.error_fn is not None:
        setup.error_fn.dump_solution(setup.u_eval(state.flat), out / "solution.csv")
    return 0


def compare(run_dirs, out=None) -> list[dict]:
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    rows = []
    for d in run_dirs:
        d = Path(d)
        hist_path = d / "history.csv"
        cfg_path = d / "config_resolved.json"
        if not hist_path.exists() or not cfg_path.exists():
            raise ConfigError(f"missing run files in {d}")
        cfg = json.loads(cfg_path.read_text())
        last = read_history(hist_path)[-1]
        rows.append({
            "run": str(d),
            "case": cfg.get("case"),
            "seed": cfg.get("seed"),
            "iterations": last[0],
            "final_train_loss": last[1],
            "final_val_loss": last[2],
            "final_rel_h1_error_pct": last[3],
        })
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in header))
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specres")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train a catalog case or run a verification")
    p_run.add_argument("--case", choices=sorted(CASES))
    p_run.add_argument("--config", help="JSON file with resolved settings")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--lr", type=float)
    p_run.add_argument("--iterations", type=int)
    p_run.add_argument("--tau", type=float)
    p_run.add_argument("--max-ref", dest="max_ref", type=int)
    p_run.add_argument("--modes", type=_parse_counts)
    p_run.add_argument("--quad-points", dest="quad_points", type=_parse_counts)
    p_run.add_argument("--ridge", type=float)
    p_run.add_argument("--val-every", dest="val_every", type=int)
    p_run.add_argument("--error-every", dest="error_every", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--verify", choices=("lshape-xi", "partition", "gradcheck"))

    p_cmp = sub.add_parser("compare", help="tabulate final rows of finished runs")
    p_cmp.add_argument("run_dirs", nargs="+")
    p_cmp.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run(_resolve_config(args))
        return 0 if compare(args.run_dirs, out=args.out) else 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
