"""``exdm pretrain|finetune|lab|plot`` command-line entry point.

Exit codes: 0 success, 1 a module error or a failed lab check, 2 a missing config file.
Run directories go to ``--out`` when given, else under ``$EXDM_RUN_ROOT`` (default ``./runs``).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from .config import RunConfig, bundled_config, load_config
from .errors import ExdmError, MissingArtifacts


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _run_dir(args, cmd: str, seed: int) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("EXDM_RUN_ROOT", "runs"))
    return root / f"{cmd}_{time.strftime('%Y%m%d-%H%M%S')}_s{seed}"


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else bundled_config("default")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_pretrain(args) -> int:
    from .pretrain import run_pretrain

    cfg = _load(args)
    out = _run_dir(args, "pretrain", cfg.seed)
    st = run_pretrain(cfg, out)
    print(f"pretrain: {st.env_steps} env steps, coverage {st.coverage.coverage:.4f} -> {out}")
    return 0


def cmd_finetune(args) -> int:
    from .finetune import run_finetune

    cfg = _load(args)
    out = _run_dir(args, "finetune", cfg.seed)
    st = run_finetune(cfg, args.pretrain_dir, out)
    print(f"finetune: {st.n} iterations, eval return {st.summary['eval_return']:.3f} -> {out}")
    return 0


def cmd_lab(args) -> int:
    from .lab import run_lab

    cfg = _load(args)
    out = _run_dir(args, "lab", cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    report = run_lab(cfg.lab, cfg.seed)
    (out / "lab_report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for c in report["checks"]:
            fh.write(json.dumps(c, sort_keys=True) + "\n")
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    return 0 if report["passed"] else 1


def cmd_plot(args) -> int:
    run = Path(args.run_dir)
    traj, curve = run / "trajectories.csv", run / "coverage_curve.csv"
    if not traj.exists() or not curve.exists():
        raise MissingArtifacts(f"{run} lacks trajectories.csv / coverage_curve.csv")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from .maze import resolve_maze

    xy = np.loadtxt(traj, delimiter=",", skiprows=1, ndmin=2)
    cov = np.loadtxt(curve, delimiter=",", skiprows=1, ndmin=2)
    cfg_path = run / "config.cfg"
    spec = resolve_maze(load_config(cfg_path).env.maze_spec) if cfg_path.exists() else None

    fig, ax = plt.subplots(figsize=(5, 5))
    if spec is not None:
        ax.imshow(spec.wall_mask, cmap="Greys", extent=spec.bounds[0::2] + spec.bounds[1::2][::-1], alpha=0.6)
    if len(xy):
        ax.scatter(xy[:, 1], xy[:, 2], c=xy[:, 0], s=0.5, cmap="viridis")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    fig.savefig(run / "trajectories.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3))
    if len(cov):
        ax.plot(cov[:, 0], cov[:, 1])
    ax.set_xlabel("env steps")
    ax.set_ylabel("coverage")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(run / "coverage.png", dpi=120)
    plt.close(fig)
    print(f"plot: wrote trajectories.png, coverage.png in {run}")
    return 0


COMMANDS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "lab": cmd_lab, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exdm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "finetune", "lab"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file (default: bundled desk-scale config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="run directory")
        sp.add_argument("--seeds", help="e.g. 0..9 or 0,2,5: one child process per seed")
        if name == "finetune":
            sp.add_argument("--pretrain-dir", required=True)
    sp = sub.add_parser("plot")
    sp.add_argument("run_dir")
    return p


def _spawn_seeds(args, argv) -> int:
    seeds = _parse_seeds(args.seeds)
    base = [a for a in argv if a not in (f"--seeds={args.seeds}",)]
    # drop the --seeds/--seed/--out pairs; each child gets its own
    clean, skip = [], False
    for a in base:
        if skip:
            skip = False
            continue
        if a in ("--seeds", "--seed", "--out"):
            skip = True
            continue
        if a.startswith(("--seeds=", "--seed=", "--out=")):
            continue
        clean.append(a)
    root = Path(args.out) if args.out else Path(os.environ.get("EXDM_RUN_ROOT", "runs"))
    dirs = [root / f"{args.command}_s{s}" for s in seeds]
    procs = [subprocess.Popen([sys.executable, "-m", "exdm.cli", *clean, "--seed", str(s), "--out", str(d)])
             for s, d in zip(seeds, dirs)]
    rc = max(p.wait() for p in procs)
    _write_aggregate(args.command, root, dict(zip(seeds, dirs)))
    return rc


# per-seed score each command contributes to aggregate.json
_SCORE = {"pretrain": ("summary.json", "coverage"), "finetune": ("summary.json", "eval_return")}


def _write_aggregate(command: str, root: Path, runs: dict) -> None:
    if command not in _SCORE:
        return
    from .metrics import aggregate

    name, key = _SCORE[command]
    scores = {s: json.loads((d / name).read_text())[key] for s, d in runs.items() if (d / name).exists()}
    if len(scores) < 2:
        return
    out = {"command": command, "score": key, "per_seed": scores, **aggregate(list(scores.values()))}
    (root / "aggregate.json").write_text(json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", None):
        return _spawn_seeds(args, argv)
    if getattr(args, "config", None) and not Path(args.config).exists():
        print(f"error: config not found: {args.config}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ExdmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
