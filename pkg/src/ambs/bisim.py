"""Ground-truth computations on tabular MDPs.

Exact policy aggregation, the behavioral pseudometric fixed point

    d_{k+1}(s_i, s_j) = (1 - c) |R^pi_i - R^pi_j| + c W1(d_k)(P^pi_i, P^pi_j)

iterated from d_0 = 0, exact values by linear solve, numerical checkers for
the value-difference bounds, and supervised target datasets for verifying
the learned similarity heads.  Everything here runs in float64.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .diffcore import ContractViolation
from .ot import w1_discrete

_ROW_TOL = 1e-9


class TabularMDP:
    """Explicit finite MDP: transition cube P[s, a, s'], rewards R[s, a].

    Rewards must lie in [0, 1] — the value-difference bounds checked by
    ``check_value_bound`` and ``check_discount_bound`` assume it.
    """

    def __init__(self, P, R, gamma):
        P = np.asarray(P, dtype=np.float64)
        R = np.asarray(R, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ContractViolation(f"P must be (n, a, n), got {P.shape}")
        n, a, _ = P.shape
        if R.shape != (n, a):
            raise ContractViolation(f"R shape {R.shape} != ({n}, {a})")
        if (P < -1e-12).any():
            raise ContractViolation("negative transition probability")
        rowsum = P.sum(axis=2)
        if np.abs(rowsum - 1.0).max() > _ROW_TOL:
            raise ContractViolation(f"transition rows sum to {rowsum.min()}..{rowsum.max()}")
        if R.min() < -1e-12 or R.max() > 1.0 + 1e-12:
            raise ContractViolation(f"rewards outside [0, 1]: {R.min()}..{R.max()}")
        if not (0.0 <= gamma < 1.0):
            raise ContractViolation(f"gamma {gamma} outside [0, 1)")
        self.P = np.clip(P, 0.0, None)
        self.R = np.clip(R, 0.0, 1.0)
        self.gamma = float(gamma)

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def to_json(self):
        return json.dumps(
            {
                "n_states": self.n_states,
                "n_actions": self.n_actions,
                "gamma": self.gamma,
                "P": self.P.tolist(),
                "R": self.R.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        mdp = cls(obj["P"], obj["R"], obj["gamma"])
        if mdp.n_states != obj["n_states"] or mdp.n_actions != obj["n_actions"]:
            raise ContractViolation("serialized shape fields disagree with arrays")
        return mdp


def validate_policy(mdp, pi):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ContractViolation(
            f"policy shape {pi.shape} != ({mdp.n_states}, {mdp.n_actions})"
        )
    if (pi < -1e-12).any() or np.abs(pi.sum(axis=1) - 1.0).max() > _ROW_TOL:
        raise ContractViolation("policy rows must be stochastic")
    return np.clip(pi, 0.0, None)


def random_mdp(rng, n_states, n_actions, gamma=0.9, concentration=1.0):
    """Random MDP: Dirichlet transition rows, rewards uniform in [0, 1]."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(P, R, gamma)


def random_policy(rng, mdp, concentration=1.0):
    return rng.dirichlet(np.full(mdp.n_actions, concentration), size=mdp.n_states)


def policy_aggregate(mdp, pi):
    """Aggregate rewards and transitions under pi.

    R^pi_s = sum_a pi(a|s) R(s, a);  P^pi_s = sum_a pi(a|s) P(.|s, a).
    """
    pi = validate_policy(mdp, pi)
    R_pi = (pi * mdp.R).sum(axis=1)
    P_pi = np.einsum("sa,san->sn", pi, mdp.P)
    # renormalize away accumulated roundoff so downstream W1 accepts the rows
    P_pi /= P_pi.sum(axis=1, keepdims=True)
    return R_pi, P_pi


def bisim_fixed_point(mdp, pi, c, tol=1e-9):
    """Least fixed point of the behavioral-metric operator, from d_0 = 0.

    The operator is a c-contraction, so iterates converge geometrically;
    monotone growth and the per-step contraction factor are asserted as the
    iteration runs.  Returns (d_star, info) where info reports iterations
    and the final sup-norm step.
    """
    if not (0.0 < c < 1.0):
        raise ContractViolation(f"c {c} outside (0, 1)")
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    R_pi, P_pi = policy_aggregate(mdp, pi)
    n = mdp.n_states
    rgap = np.abs(R_pi[:, None] - R_pi[None, :])
    cap = math.ceil(math.log(tol) / math.log(c)) + 16

    d = np.zeros((n, n))
    prev_delta = None
    for it in range(1, cap + 1):
        nxt = np.zeros_like(d)
        for i in range(n):
            for j in range(i + 1, n):
                w1 = w1_discrete(P_pi[i], P_pi[j], d)
                nxt[i, j] = nxt[j, i] = (1.0 - c) * rgap[i, j] + c * w1
        if (nxt - d).min() < -1e-12:
            raise ContractViolation("fixed-point iterates stopped being monotone")
        delta = float(np.abs(nxt - d).max())
        if prev_delta is not None and delta > c * prev_delta + 1e-12:
            raise ContractViolation(
                f"contraction factor exceeded c: {delta} > c * {prev_delta}"
            )
        d = nxt
        if delta < tol:
            return d, {"iterations": it, "final_delta": delta, "c": c, "tol": tol}
        prev_delta = delta
    raise ContractViolation(
        f"no convergence within {cap} iterations (transport solver suspect)"
    )


def exact_value(mdp, pi, gamma=None):
    """V^pi by direct linear solve of (I - gamma P^pi) V = R^pi."""
    g = mdp.gamma if gamma is None else float(gamma)
    if not (0.0 <= g < 1.0):
        raise ContractViolation(f"gamma {g} outside [0, 1)")
    R_pi, P_pi = policy_aggregate(mdp, pi)
    return np.linalg.solve(np.eye(mdp.n_states) - g * P_pi, R_pi)


def check_value_bound(mdp, pi, c, tol=1e-9):
    """Verify (1-c)|V_i - V_j| <= d*(i,j) + correction for every pair.

    correction = 2 (1-c) (gamma - min(c, gamma)) / ((1-gamma)(1-c)); it
    vanishes when c >= gamma.  Returns a report with the worst violation
    (positive means the bound failed) and per-pair slack.
    """
    gamma = mdp.gamma
    d_star, info = bisim_fixed_point(mdp, pi, c, tol=tol)
    V = exact_value(mdp, pi)
    lhs = (1.0 - c) * np.abs(V[:, None] - V[None, :])
    correction = 2.0 * (1.0 - c) * (gamma - min(c, gamma)) / ((1.0 - gamma) * (1.0 - c))
    rhs = d_star + correction
    slack = rhs - lhs
    return {
        "max_violation": float((lhs - rhs).max()),
        "slack": slack,
        "correction": correction,
        "c": c,
        "gamma": gamma,
        "fixed_point_iterations": info["iterations"],
    }


def check_discount_bound(mdp, pi, gamma1, gamma2):
    """Verify |V_{gamma1}(s) - V_{gamma2}(s)| <= (g2-g1)/((1-g1)(1-g2))."""
    if not (0.0 <= gamma1 <= gamma2 < 1.0):
        raise ContractViolation(f"need 0 <= gamma1 <= gamma2 < 1, got {gamma1}, {gamma2}")
    V1 = exact_value(mdp, pi, gamma=gamma1)
    V2 = exact_value(mdp, pi, gamma=gamma2)
    bound = (gamma2 - gamma1) / ((1.0 - gamma1) * (1.0 - gamma2))
    gaps = np.abs(V1 - V2)
    return {
        "max_violation": float((gaps - bound).max()),
        "bound": bound,
        "per_state_gap": gaps,
        "gamma1": gamma1,
        "gamma2": gamma2,
    }


def emit_supervision(mdp, pi, c, d_star):
    """Exact regression targets for similarity heads, one per ordered pair.

    Observations are one-hot state indicators; targets are the reward gap,
    the W1 distance between aggregated next-state distributions under the
    converged metric, and their (1-c, c) combination.
    """
    if not (0.0 < c < 1.0):
        raise ContractViolation(f"c {c} outside (0, 1)")
    n = mdp.n_states
    d_star = np.asarray(d_star, dtype=np.float64)
    if d_star.shape != (n, n):
        raise ContractViolation(f"d_star shape {d_star.shape} != ({n}, {n})")
    R_pi, P_pi = policy_aggregate(mdp, pi)
    eye = np.eye(n, dtype=np.float32)
    idx_i, idx_j = np.divmod(np.arange(n * n), n)
    target_r = np.abs(R_pi[idx_i] - R_pi[idx_j])
    target_d = np.empty(n * n)
    w1_cache = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w1_cache[i, j] = w1_cache[j, i] = w1_discrete(P_pi[i], P_pi[j], d_star)
    target_d[:] = w1_cache[idx_i, idx_j]
    return {
        "obs_i": eye[idx_i],
        "obs_j": eye[idx_j],
        "state_i": idx_i,
        "state_j": idx_j,
        "target_r": target_r,
        "target_d": target_d,
        "target_total": (1.0 - c) * target_r + c * target_d,
    }
