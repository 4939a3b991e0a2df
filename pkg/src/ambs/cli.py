"""Operator surface: train / eval / oracle-check / gradcheck / fit-oracle.

Every subcommand is deterministic given its config and seed; the env var
AMBS_SEED, when set, overrides the config seed.  Exit codes: 0 success,
1 usage or config error, 2 verification failure, 3 runtime numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bisim, losses, nets
from . import diffcore as dc
from .agent import (
    Agent,
    Collector,
    NumericalFailure,
    build_fit_dataset,
    evaluate,
    fit_to_oracle,
)
from .config import FitConfig, RunConfig
from .diffcore import ContractViolation, Tensor
from .envs import PointMassEnv
from .replay import ReplayBuffer

METRICS_VERSION = "ambs-metrics-v1"
METRICS_FIELDS = (
    "step", "episode_return", "repr_loss", "reward_term", "dynamics_term",
    "q_loss", "actor_loss", "alpha", "c", "phi_r_norm", "phi_d_norm", "skipped",
)
NAN_STORM_LIMIT = 10
VERIFY_TOL = 1e-8


def make_env(cfg, split):
    return PointMassEnv(
        frame_size=cfg.env_frame_size,
        frame_stack=cfg.env_frame_stack,
        action_repeat=cfg.env_action_repeat,
        episode_len=cfg.env_episode_len,
        background_mode=cfg.env_background,
        background_split=split,
        background_seed=cfg.env_background_seed,
        color=cfg.env_color,
    )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".8g")


def _derived_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _apply_seed_override(cfg):
    raw = os.environ.get("AMBS_SEED")
    if raw is None:
        return cfg
    try:
        cfg.seed = int(raw)
    except ValueError:
        raise ContractViolation(f"AMBS_SEED must be an integer, got {raw!r}")
    return cfg


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def run_training(cfg):
    """The collect/train loop; returns a summary and fills cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "config.json")

    init_ss, collect_ss, train_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    agent = Agent(cfg, np.random.default_rng(init_ss))
    env = make_env(cfg, "train")
    env_eval = make_env(cfg, "eval")
    buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_shape, env.action_dim)
    collector = Collector(env, buffer)
    rng_collect = np.random.default_rng(collect_ss)
    rng_train = np.random.default_rng(train_ss)

    decisions = math.ceil(cfg.total_steps / cfg.env_action_repeat)
    consecutive_skips = 0
    evals_done = 0
    ckpts_done = 0
    last_row = None

    def run_eval(label):
        report = evaluate(
            agent, env_eval, cfg.eval_episodes,
            seed=_derived_seed(cfg.seed, 2, collector.env_frames),
        )
        report["step"] = collector.env_frames
        with open(out / f"eval_{label}.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return report

    with open(out / "metrics.csv", "w") as fh:
        fh.write(f"# {METRICS_VERSION}\n")
        fh.write(",".join(METRICS_FIELDS) + "\n")
        for _ in range(decisions):
            info = collector.collect_step(agent, rng_collect, cfg.warmup)
            row = dict.fromkeys(METRICS_FIELDS)
            if buffer.size >= cfg.batch and collector.env_frames >= cfg.warmup:
                diag = agent.train_step(buffer, rng_train)
                row.update(diag)
                if diag["skipped"]:
                    consecutive_skips += 1
                else:
                    consecutive_skips = 0
            row["step"] = collector.env_frames
            row["episode_return"] = info["episode_return"]
            fh.write(",".join(_fmt(row[k]) for k in METRICS_FIELDS) + "\n")
            last_row = row

            if consecutive_skips >= NAN_STORM_LIMIT:
                with open(out / "incidents.json", "w") as dump:
                    json.dump(
                        {
                            "consecutive_skips": consecutive_skips,
                            "env_frames": collector.env_frames,
                            "train_steps": agent.step,
                            "incidents": agent.incidents,
                            "last_row": {k: row[k] for k in METRICS_FIELDS},
                        },
                        dump, indent=2, sort_keys=True, default=str,
                    )
                raise NumericalFailure(
                    f"{consecutive_skips} consecutive training steps skipped "
                    f"non-finite losses; diagnostics in {out / 'incidents.json'}"
                )

            if cfg.eval_every and collector.env_frames // cfg.eval_every > evals_done:
                evals_done = collector.env_frames // cfg.eval_every
                run_eval(f"{collector.env_frames:08d}")
            if cfg.checkpoint_every and collector.env_frames // cfg.checkpoint_every > ckpts_done:
                ckpts_done = collector.env_frames // cfg.checkpoint_every
                agent.save(out / f"ckpt_{collector.env_frames:08d}.ambs",
                           extra={"env_frames": collector.env_frames})

    agent.save(out / "ckpt_final.ambs", extra={"env_frames": collector.env_frames})
    final_eval = run_eval("final")
    return {
        "out_dir": str(out),
        "env_frames": collector.env_frames,
        "train_steps": agent.step,
        "episodes": collector.episodes,
        "final_eval": final_eval,
    }


def cmd_train(config_path):
    cfg = _apply_seed_override(RunConfig.from_file(config_path))
    summary = run_training(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(checkpoint, episodes):
    agent, manifest = Agent.load(checkpoint)
    cfg = _apply_seed_override(RunConfig.from_dict(manifest["config"]))
    report = evaluate(
        agent, make_env(cfg, "eval"), episodes, seed=_derived_seed(cfg.seed, 3)
    )
    report["checkpoint"] = str(checkpoint)
    report["step"] = agent.step
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def oracle_check_report(instances=100, seed=0, tol=VERIFY_TOL):
    """Fixed-point + value-bound + discount-bound sweep over random MDPs.

    The first instance is the single-state edge case; the rest draw 2-8
    states, 2-4 actions, and a discount in [0.3, 0.95].  The value bound is
    checked on a c-grid {0.1, ..., 0.9} per MDP; the discount bound on one
    random (gamma1, gamma2) pair per MDP.
    """
    rng = np.random.default_rng(seed)
    c_grid = [round(0.1 * k, 1) for k in range(1, 10)]
    report = {
        "instances": instances,
        "seed": seed,
        "tolerance": tol,
        "c_grid": c_grid,
        "per_instance": [],
        "offenders": [],
        "max_value_violation": -np.inf,
        "max_discount_violation": -np.inf,
    }

    mdps = [bisim.TabularMDP(np.ones((1, 2, 1)), np.array([[0.25, 0.75]]), 0.9)]
    while len(mdps) < instances:
        n = int(rng.integers(2, 9))
        a = int(rng.integers(2, 5))
        gamma = float(rng.uniform(0.3, 0.95))
        mdps.append(bisim.random_mdp(rng, n, a, gamma=gamma))

    for idx, mdp in enumerate(mdps):
        pi = bisim.random_policy(rng, mdp)
        iters = []
        for c in c_grid:
            res = bisim.check_value_bound(mdp, pi, c)
            iters.append(res["fixed_point_iterations"])
            report["max_value_violation"] = max(
                report["max_value_violation"], res["max_violation"]
            )
            if res["max_violation"] > tol:
                report["offenders"].append({
                    "kind": "value_bound", "instance": idx, "c": c,
                    "violation": res["max_violation"],
                    "P": mdp.P.tolist(), "R": mdp.R.tolist(),
                    "gamma": mdp.gamma, "pi": pi.tolist(),
                })
        g1, g2 = sorted(rng.uniform(0.0, 0.95, size=2))
        res = bisim.check_discount_bound(mdp, pi, float(g1), float(g2))
        report["max_discount_violation"] = max(
            report["max_discount_violation"], res["max_violation"]
        )
        if res["max_violation"] > tol:
            report["offenders"].append({
                "kind": "discount_bound", "instance": idx,
                "gamma1": float(g1), "gamma2": float(g2),
                "violation": res["max_violation"],
                "P": mdp.P.tolist(), "R": mdp.R.tolist(), "pi": pi.tolist(),
            })
        caps = [math.ceil(math.log(1e-9) / math.log(c)) + 16 for c in c_grid]
        report["per_instance"].append({
            "n_states": mdp.n_states,
            "gamma": mdp.gamma,
            "iterations": iters,
            "within_cap": bool(all(i <= cap for i, cap in zip(iters, caps))),
        })

    report["violations"] = len(report["offenders"])
    report["pass"] = report["violations"] == 0
    return report


def cmd_oracle_check(instances, seed, out_path=None):
    report = oracle_check_report(instances=instances, seed=seed)
    payload = dict(report)
    if not report["pass"]:
        # keep stdout readable; full offender dumps only in the file report
        payload["offenders"] = payload["offenders"][:2]
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")
    return 0 if report["pass"] else 2


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def _as_f64(*blocks):
    for block in blocks:
        for p in block.params:
            p.data = p.data.astype(np.float64)


def gradcheck_report(seed=0, max_coords=6, tol=1e-3):
    """Finite-difference check of all six losses plus the detachment ledger.

    Small float64 networks, fixed seeds; any loss above ``tol`` relative
    error, or any supposedly-detached parameter with a nonzero gradient,
    fails the report.
    """
    rng = np.random.default_rng(seed)
    H, B, zr, zd, adim = 16, 3, 4, 4, 2
    enc = nets.Encoder(rng, 2, H, H, zr, zd, channels=4)
    meta_r = nets.MetaLearner(rng, zr, hidden=8)
    meta_d = nets.MetaLearner(rng, zd, hidden=8)
    dyn = nets.DynamicsModel(rng, zd, adim, hidden=8)
    critic = nets.Critic(rng, zr, zd, adim, hidden=8)
    actor = nets.Actor(rng, enc.conv.feat_dim, adim, hidden=(8,))
    weight = nets.AdaptiveWeight((0.2, -0.1))
    log_alpha = Tensor(np.float64(np.log(0.1)), requires_grad=True)
    _as_f64(enc, meta_r, meta_d, dyn, critic, actor, weight)

    data = np.random.default_rng(seed + 1)

    def obs():
        return Tensor(data.uniform(0.0, 1.0, size=(B, 2, H, H)))

    o_i1, o_j1, o_i2, o_j2 = obs(), obs(), obs(), obs()
    o_n1, o_n2 = obs(), obs()
    act_i = Tensor(data.uniform(-1.0, 1.0, size=(B, adim)))
    act_j = Tensor(data.uniform(-1.0, 1.0, size=(B, adim)))
    r_i = data.uniform(0.0, 1.0, size=B)
    r_j = data.uniform(0.0, 1.0, size=B)
    y = data.uniform(0.0, 2.0, size=B)
    log_pi_fixed = data.uniform(-3.0, 0.0, size=B)

    with losses.frozen(enc, dyn):
        _, zdi, _ = enc.encode(o_i1)
        _, zdj, _ = enc.encode(o_j1)
        w2t = losses.pair_w2_target(dyn, zdi, zdj, act_i, act_j)

    cases = {
        "repr_loss": (
            lambda: losses.repr_loss(enc, meta_r, meta_d, dyn, o_i1, o_j1, o_i2, o_j2,
                                     act_i, act_j, r_i, r_j, c_value=0.45,
                                     w2_target=w2t)[0],
            enc.params + meta_r.params + meta_d.params,
        ),
        "q_loss": (
            lambda: losses.q_loss(critic, enc, o_i1, o_i2, act_i, y,
                                  c=weight.value())[0],
            critic.params + enc.params + weight.params,
        ),
        "actor_loss": (
            lambda: losses.actor_loss(actor, enc, critic, o_i1, 0.1, 0.45,
                                      np.random.default_rng(7))[0],
            actor.params,
        ),
        "alpha_loss": (
            lambda: losses.alpha_loss(log_alpha, log_pi_fixed, -float(adim))[0],
            [log_alpha],
        ),
        "dynamics_loss": (
            lambda: losses.dynamics_loss(dyn, enc, o_i1, o_n1, act_i)[0],
            dyn.params,
        ),
        "l1_baseline_loss": (
            lambda: losses.l1_baseline_loss(enc, dyn, o_i1, o_j1, act_i, act_j,
                                            r_i, r_j, 0.99, w2_target=w2t)[0],
            enc.params,
        ),
    }

    checks = {}
    for name, (f, params) in cases.items():
        rep = dc.finite_difference_check(
            f, params, max_coords=max_coords, rng=np.random.default_rng(0)
        )
        checks[name] = {
            "max_rel_err": float(rep.max_rel_err),
            "ok": bool(rep.ok and rep.max_rel_err <= tol),
        }
        dc.reset_graph()

    def all_zero(params_):
        return all(p.grad is None or not np.any(p.grad) for p in params_)

    ledger = {}
    # c reaches the representation loss as a stopped value: no gradient to the logits
    dc.zero_grads(weight.params)
    c_now = float(weight.value().data)
    loss, _ = losses.repr_loss(enc, meta_r, meta_d, dyn, o_i1, o_j1, o_i2, o_j2,
                               act_i, act_j, r_i, r_j, c_value=c_now)
    dc.zero_grads(dyn.params)
    dc.backward(loss)
    ledger["repr_detaches_balance_logits"] = all_zero(weight.params)
    # the live transition-model target is also detached
    ledger["repr_detaches_dynamics_model"] = all_zero(dyn.params)
    dc.reset_graph()
    # the actor objective reaches neither the critic nor the encoder
    dc.zero_grads(critic.params + enc.params)
    loss, _, _ = losses.actor_loss(actor, enc, critic, o_i1, 0.1, 0.45,
                                   np.random.default_rng(7))
    dc.backward(loss)
    ledger["actor_detaches_critic"] = all_zero(critic.params)
    ledger["actor_detaches_encoder"] = all_zero(enc.params)
    dc.reset_graph()

    ok = all(v["ok"] for v in checks.values()) and all(ledger.values())
    return {"tolerance": tol, "losses": checks, "ledger": ledger, "pass": ok}


def cmd_gradcheck():
    report = gradcheck_report()
    print(json.dumps(report, indent=2, sort_keys=True))
    if report["pass"]:
        return 0
    bad = [k for k, v in report["losses"].items() if not v["ok"]]
    bad += [k for k, v in report["ledger"].items() if not v]
    print(f"gradcheck failed: {', '.join(bad)}", file=sys.stderr)
    return 2


# ---------------------------------------------------------------------------
# fit-oracle
# ---------------------------------------------------------------------------


def run_fit_oracle(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "fit_config.json")

    data = build_fit_dataset(
        np.random.default_rng(cfg.mdp_seed), cfg.n_states, cfg.c,
        n_actions=cfg.n_actions, frame_size=cfg.frame_size,
    )
    window = min(cfg.smooth_window, cfg.steps)
    finals = {"meta": [], "l1": []}
    with open(out / "curves.csv", "w") as fh:
        fh.write("variant,trial,step,loss\n")
        for trial in range(cfg.trials):
            for variant in ("meta", "l1"):
                net_rng = np.random.default_rng(_derived_seed(cfg.seed, trial))
                enc = nets.Encoder(net_rng, 1, cfg.frame_size, cfg.frame_size,
                                   cfg.z_r, cfg.z_d, channels=cfg.conv_channels)
                head = None
                if variant == "meta":
                    head = nets.MetaLearner(net_rng, cfg.z_r + cfg.z_d,
                                            hidden=cfg.meta_hidden)
                curve = fit_to_oracle(enc, head, data, cfg.steps, lr=cfg.lr)
                for k, v in enumerate(curve):
                    fh.write(f"{variant},{trial},{k},{_fmt(v)}\n")
                finals[variant].append(float(np.mean(curve[-window:])))

    ratios = [m / l for m, l in zip(finals["meta"], finals["l1"])]
    report = {
        "trials": cfg.trials,
        "steps": cfg.steps,
        "smooth_window": window,
        "final_meta": finals["meta"],
        "final_l1": finals["l1"],
        "ratio": ratios,
        "mean_ratio": float(np.mean(ratios)),
        "meta_below_l1_all_trials": bool(all(m < l for m, l in zip(finals["meta"], finals["l1"]))),
    }
    with open(out / "fit_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def cmd_fit_oracle(config_path):
    cfg = _apply_seed_override(FitConfig.from_file(config_path))
    report = run_fit_oracle(cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="ambs",
        description="Behavioral-similarity representation learning harness",
    )
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="run the collect/train loop from a config")
    t.add_argument("--config", required=True)
    e = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    o = sub.add_parser("oracle-check", help="verify metric fixed points and value bounds")
    o.add_argument("--instances", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", default=None, help="also write the full JSON report here")
    sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    f = sub.add_parser("fit-oracle", help="regress exact similarity targets, meta vs L1")
    f.add_argument("--config", required=True)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.episodes)
        if args.command == "oracle-check":
            return cmd_oracle_check(args.instances, args.seed, args.out)
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "fit-oracle":
            return cmd_fit_oracle(args.config)
        raise ContractViolation(f"unknown command {args.command!r}")
    except (ContractViolation, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
