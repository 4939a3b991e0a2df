"""Acceptance gate: one test per release criterion, one verdict line each.

Each test prints ``<ID> PASS/FAIL — detail`` before asserting, so a full
run of this file reads as the acceptance report.  The two endpoint
criteria (distraction robustness, balance-weight behavior) consume the
nine-run study defined in ambs.protocol; finished runs are reused from
``AMBS_RUNS_DIR`` (default runs/distraction), and missing ones are
trained in place, which takes a few hours on one core.  Everything else
runs from scratch in minutes.
"""

import time

import numpy as np
import pytest

import oracles
from ambs import bisim, ot, protocol
from ambs import cli
from ambs.config import FitConfig, RunConfig


def _verdict(name, ok, detail):
    print(f"{name} {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared instance sets
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def mdp_suite():
    """100 random tabular MDPs (2-8 states, rewards in [0, 1]) + policies."""
    rng = np.random.default_rng(0)
    suite = []
    for _ in range(100):
        n = int(rng.integers(2, 9))
        a = int(rng.integers(2, 5))
        mdp = bisim.random_mdp(rng, n, a, gamma=float(rng.uniform(0.3, 0.95)))
        pi = bisim.random_policy(rng, mdp)
        c = float(rng.uniform(0.1, 0.9))
        suite.append((mdp, pi, c))
    return suite


@pytest.fixture(scope="module")
def study_summary():
    protocol.ensure_runs()
    return protocol.load_summary()


# ---------------------------------------------------------------------------
# A1  fixed point vs. independent brute force
# ---------------------------------------------------------------------------


def test_a1_oracle_equivalence(mdp_suite):
    t0 = time.time()
    worst_gap = 0.0
    for mdp, pi, c in mdp_suite:
        d_fast, info = bisim.bisim_fixed_point(mdp, pi, c, tol=1e-9)
        cap = int(np.ceil(np.log(1e-9) / np.log(c))) + 16
        assert 1 <= info["iterations"] <= cap, "iteration cap violated"
        R_pi, P_pi = bisim.policy_aggregate(mdp, pi)
        d_ref = oracles.bisim_by_plain_sweep(R_pi, P_pi, c, tol=1e-8)
        worst_gap = max(worst_gap, float(np.abs(d_fast - d_ref).max()))
    elapsed = time.time() - t0
    ok = worst_gap <= 1e-6 and elapsed < 120.0
    _verdict("A1", ok, f"worst pair gap {worst_gap:.2e} (tol 1e-6) over 100 MDPs "
                       f"vs enumeration/LP reference in {elapsed:.0f}s (< 120s)")


# ---------------------------------------------------------------------------
# A2  value-difference and discount theorem sweeps
# ---------------------------------------------------------------------------


def test_a2_theorem_sweeps(mdp_suite):
    worst_value = -np.inf
    for mdp, pi, _ in mdp_suite:
        for c in np.linspace(0.1, 0.9, 9):
            worst_value = max(worst_value,
                              bisim.check_value_bound(mdp, pi, float(c))["max_violation"])

    rng = np.random.default_rng(1)
    worst_discount = -np.inf
    for mdp, pi, _ in mdp_suite:
        g = np.sort(rng.uniform(0.0, 0.99, size=2))
        report = bisim.check_discount_bound(mdp, pi, float(g[0]), float(g[1]))
        worst_discount = max(worst_discount, report["max_violation"])

    # reward-1 absorbing state: V_g = 1/(1-g), which meets the bound exactly
    P = np.zeros((2, 1, 2)); P[0, 0, 0] = 1.0; P[1, 0, 1] = 1.0
    absorbing = bisim.TabularMDP(P, np.array([[1.0], [0.0]]), 0.9)
    uniform = np.ones((2, 1))
    tight = bisim.check_discount_bound(absorbing, uniform, 0.5, 0.9)
    equality_gap = abs(tight["max_violation"])

    ok = worst_value <= 1e-8 and worst_discount <= 1e-8 and equality_gap <= 1e-9
    _verdict("A2", ok, f"900 value-bound checks worst {worst_value:.2e}, 100 discount "
                       f"checks worst {worst_discount:.2e} (tol 1e-8); absorbing "
                       f"equality gap {equality_gap:.1e} (tol 1e-9)")


# ---------------------------------------------------------------------------
# A3  closed-form Gaussian W2 vs quadrature
# ---------------------------------------------------------------------------


def test_a3_gaussian_w2_closed_form():
    rng = np.random.default_rng(2)
    worst_rel = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 9))
        mu_a, mu_b = rng.normal(0, 2, size=(2, dim))
        sig_a, sig_b = rng.uniform(0.1, 3.0, size=(2, dim))
        closed = ot.w2_diag_gaussian(mu_a, sig_a, mu_b, sig_b)
        ref = oracles.w2_by_quantile_quadrature(mu_a, sig_a, mu_b, sig_b)
        worst_rel = max(worst_rel, abs(closed - ref) / ref)
    ok = worst_rel <= 0.02
    _verdict("A3", ok, f"50 diagonal-Gaussian pairs up to 8 dims, worst relative "
                       f"gap {worst_rel:.2e} (tol 2e-2)")


# ---------------------------------------------------------------------------
# A4  finite-difference gradients and stop-gradient ledger
# ---------------------------------------------------------------------------


def test_a4_gradient_integrity():
    report = cli.gradcheck_report()
    worst = max(v["max_rel_err"] for v in report["losses"].values())
    bad = [k for k, v in report["losses"].items() if not v["ok"]]
    bad += [k for k, v in report["ledger"].items() if not v]
    ok = report["pass"] and not bad
    _verdict("A4", ok, f"six losses within {report['tolerance']:.0e} of central "
                       f"differences (worst {worst:.1e}); stop-gradient ledger "
                       f"all exactly zero" + (f"; FAILING: {bad}" if bad else ""))


# ---------------------------------------------------------------------------
# A5  regression-loss comparison against exact targets
# ---------------------------------------------------------------------------


def test_a5_fit_ratio(tmp_path):
    t0 = time.time()
    report = cli.run_fit_oracle(FitConfig(out_dir=str(tmp_path / "fit")).validate())
    elapsed = time.time() - t0
    ratios = report["ratio"]
    ok = (report["meta_below_l1_all_trials"]
          and all(r <= 0.5 for r in ratios)
          and elapsed < 600.0)
    _verdict("A5", ok, f"final smoothed loss ratios {[round(r, 3) for r in ratios]} "
                       f"(each ≤ 0.5, strictly below) in {elapsed:.0f}s (< 600s)")


# ---------------------------------------------------------------------------
# A6  endpoint returns under distraction
# ---------------------------------------------------------------------------


def test_a6_distraction_robustness(study_summary):
    means = study_summary["mean_returns"]
    scroll, none, l1 = means["scroll"], means["none"], means["l1"]
    ok = scroll >= 0.8 * none and scroll > l1
    _verdict("A6", ok, f"mean final return scroll {scroll:.1f} vs none {none:.1f} "
                       f"(needs ≥ {0.8 * none:.1f}) and vs l1 ablation {l1:.1f} "
                       f"(needs strictly greater), 3 seeds each at 50k frames")


# ---------------------------------------------------------------------------
# A7  balance-weight behavior
# ---------------------------------------------------------------------------


def test_a7_balance_weight(study_summary):
    balance = study_summary["balance"]
    assert len(balance) == 6, "expected six full-agent runs in the study"
    stuck = [k for k, b in balance.items() if b["max_early_move"] < 0.02]
    escaped = [k for k, b in balance.items() if not b["in_open_interval"]]
    unlogged = [k for k, b in balance.items() if b["logged_points"] == 0]
    ok = not (stuck or escaped or unlogged)
    moves = {k: round(b["max_early_move"], 3) for k, b in balance.items()}
    _verdict("A7", ok, f"per-run max |c-0.5| within first 5k frames {moves} "
                       f"(each ≥ 0.02); c stayed inside (0,1) at every logged step"
                       + (f"; stuck: {stuck}" if stuck else "")
                       + (f"; escaped: {escaped}" if escaped else ""))


# ---------------------------------------------------------------------------
# A8  byte-level determinism
# ---------------------------------------------------------------------------


def test_a8_determinism(tmp_path):
    base = dict(
        seed=11, total_steps=200, env_frame_size=16, env_frame_stack=1,
        env_action_repeat=1, env_episode_len=25, env_background="scroll",
        conv_channels=4, z_r=4, z_d=4, critic_hidden=16, actor_hidden=(16,),
        meta_hidden=8, dynamics_hidden=16, batch=4, buffer_capacity=400,
        warmup=40, crop_pad=2, eval_every=0, eval_episodes=1,
    )
    blobs = []
    for tag in ("first", "second"):
        cfg = RunConfig(out_dir=str(tmp_path / tag), **base).validate()
        cli.run_training(cfg)
        blobs.append((tmp_path / tag / "metrics.csv").read_bytes())
    ok = blobs[0] == blobs[1]
    _verdict("A8", ok, f"two identically-seeded 200-step runs, metrics.csv "
                       f"byte-identical ({len(blobs[0])} bytes)")
