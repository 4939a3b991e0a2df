"""Desk-scale distraction-robustness study: run matrix, runner, summary.

The study trains the full agent on the point-mass task with and without
scrolling distractors, plus the L1-metric ablation under distractors,
over a common set of seeds, and compares endpoint evaluation returns and
the learned balance-weight trajectory.  The matrix lives here so the
command-line runner, the demo scripts, and the acceptance tests all
agree on exactly which runs exist and what their configs are.

Runs land under ``AMBS_RUNS_DIR`` when that variable is set, else under
``runs/distraction`` relative to the working directory.  A run directory
is reused when its resolved config matches the matrix entry and its
final evaluation exists, so interrupted studies resume at run
granularity and nothing is retrained needlessly.
"""

import csv
import json
import os
from pathlib import Path

from .config import RunConfig

SEEDS = (0, 1, 2)
TOTAL_STEPS = 50_000

# Small conv + a buffer that never wraps at this length keep one run in
# the tens-of-minutes range on a single core without changing behavior.
_STUDY_OVERRIDES = dict(
    total_steps=TOTAL_STEPS,
    conv_channels=8,
    buffer_capacity=15_000,
)

VARIANTS = {
    "scroll": dict(env_background="scroll"),
    "none": dict(env_background="none"),
    "l1": dict(env_background="scroll", l1_baseline=True),
}


def runs_root():
    return Path(os.environ.get("AMBS_RUNS_DIR", "runs/distraction"))


def run_matrix(root=None):
    """All (name -> RunConfig) pairs of the study, seeds x variants."""
    root = Path(root) if root is not None else runs_root()
    matrix = {}
    for seed in SEEDS:
        for variant, extra in VARIANTS.items():
            name = f"{variant}_s{seed}"
            matrix[name] = RunConfig(
                seed=seed,
                out_dir=str(root / name),
                **_STUDY_OVERRIDES,
                **extra,
            ).validate()
    return matrix


def is_complete(cfg):
    """True when cfg.out_dir holds a finished run of exactly this config."""
    out = Path(cfg.out_dir)
    if not (out / "eval_final.json").is_file():
        return False
    try:
        stored = RunConfig.from_file(out / "config.json")
    except Exception:
        return False
    want, got = cfg.to_dict(), stored.to_dict()
    want.pop("out_dir"), got.pop("out_dir")
    return want == got


def ensure_runs(root=None, progress=print):
    """Train whatever part of the matrix is missing; return the matrix."""
    from .cli import run_training  # deferred: cli imports are heavyish

    matrix = run_matrix(root)
    for name, cfg in matrix.items():
        if is_complete(cfg):
            continue
        if progress:
            progress(f"[study] training {name} -> {cfg.out_dir}")
        run_training(cfg)
    return matrix


def _final_return(cfg):
    with open(Path(cfg.out_dir) / "eval_final.json") as fh:
        return float(json.load(fh)["mean_return"])


def _balance_trajectory(cfg):
    steps, values = [], []
    with open(Path(cfg.out_dir) / "metrics.csv") as fh:
        next(fh)  # version comment
        for row in csv.DictReader(fh):
            if row["c"]:
                steps.append(int(row["step"]))
                values.append(float(row["c"]))
    return steps, values


def load_summary(root=None):
    """Endpoint returns per variant plus balance-weight behavior per run.

    Requires the full matrix to be complete; use ensure_runs first.
    """
    matrix = run_matrix(root)
    returns = {variant: [] for variant in VARIANTS}
    balance = {}
    for seed in SEEDS:
        for variant in VARIANTS:
            name = f"{variant}_s{seed}"
            cfg = matrix[name]
            if not is_complete(cfg):
                raise FileNotFoundError(f"study run {name} missing or stale "
                                        f"under {cfg.out_dir}")
            returns[variant].append(_final_return(cfg))
            if variant == "l1":
                continue  # the ablation's balance weight is not under study
            steps, values = _balance_trajectory(cfg)
            early = [v for s, v in zip(steps, values) if s <= 5_000]
            balance[name] = {
                "logged_points": len(values),
                "in_open_interval": bool(all(0.0 < v < 1.0 for v in values)),
                "max_early_move": max((abs(v - 0.5) for v in early), default=0.0),
                "final": values[-1] if values else None,
            }
    means = {variant: sum(v) / len(v) for variant, v in returns.items()}
    return {"returns": returns, "mean_returns": means, "balance": balance}
