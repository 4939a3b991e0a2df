"""Training objectives: paired-state representation regression, the DrQ-style
double-Q loss with its detached target, the squashed-Gaussian actor and
temperature objectives, the latent dynamics fit, and the L1-distance baseline.

Gradient routing is part of each objective's contract:

  representation loss  -> conv trunk, both encoder heads, both meta-learners
  q loss               -> critics, conv trunk, encoder heads, branch-weight logits
  actor loss           -> policy network only
  temperature loss     -> log-alpha only
  dynamics loss        -> transition model only

The balance weight c is a constant inside the representation loss (it is
learned through the Q loss alone), and every regression target — |r_i - r_j|,
the pairwise W2 between predicted latent distributions, and the bootstrapped
Q target — is fully detached.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import diffcore as dc
from .diffcore import ContractViolation, Tensor


@contextlib.contextmanager
def frozen(*blocks):
    """Temporarily stop gradient tracking for the given blocks' parameters.

    Forwards run inside this context record no graph nodes (unless some
    other input requires grad), so the outputs are constants.  Used to
    evaluate networks that a particular loss must not train.
    """
    params = [p for block in blocks for p in block.params]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, keep in zip(params, saved):
            p.requires_grad = keep


def w2_rows(mu_a, sigma_a, mu_b, sigma_b):
    """Rowwise 2-Wasserstein between diagonal Gaussians (plain numpy).

    Closed form sqrt(||dmu||^2 + ||dsigma||^2) per row; inputs (B, Z).
    """
    d2 = ((np.asarray(mu_a, dtype=np.float64) - mu_b) ** 2).sum(axis=1)
    d2 += ((np.asarray(sigma_a, dtype=np.float64) - sigma_b) ** 2).sum(axis=1)
    return np.sqrt(d2).astype(np.float32)


def _check_batch(name, *tensors):
    sizes = {t.shape[0] for t in tensors}
    if len(sizes) != 1:
        raise ContractViolation(f"{name}: mismatched batch sizes {sorted(sizes)}")


def _const(x):
    return Tensor(np.asarray(x, dtype=np.float32))


def pair_w2_target(dynamics, z_d_i, z_d_j, action_i, action_j):
    """Detached W2 between predicted next-latent distributions of a pair.

    Both distributions come from the crop-(1) embeddings; the result is a
    plain array, so no gradient reaches the dynamics model or the encoder.
    """
    with frozen(dynamics):
        mu_i, sig_i = dynamics(dc.stop_gradient(z_d_i), dc.stop_gradient(action_i))
        mu_j, sig_j = dynamics(dc.stop_gradient(z_d_j), dc.stop_gradient(action_j))
    return w2_rows(mu_i.data, sig_i.data, mu_j.data, sig_j.data)


def repr_loss(encoder, meta_r, meta_d, dynamics,
              obs_i1, obs_j1, obs_i2, obs_j2,
              action_i, action_j, reward_i, reward_j,
              c_value, reward_weight=None, w2_target=None):
    """Four-term paired regression loss over two independent crops.

    Terms 1-2 evaluate the meta-learners on (s_i^(1), s_j^(1)) in order
    (i, j); terms 3-4 use (s_j^(2), s_i^(2)) in order (j, i).  The reward
    target |r_i - r_j| is shared by both reward terms, and both dynamics
    terms regress onto the same crop-(1) W2 target (the second crop is
    pulled toward the first crop's prediction).  ``c_value`` is a plain
    float — the dynamics-branch weight, detached by construction — and the
    reward terms carry ``reward_weight`` (default 1 - c_value).

    ``w2_target`` substitutes a precomputed detached W2 target; the
    finite-difference checker uses it to hold the (always-detached) target
    fixed while parameters are perturbed.
    """
    _check_batch("repr_loss", obs_i1, obs_j1, obs_i2, obs_j2, action_i, action_j)
    if reward_weight is None:
        reward_weight = 1.0 - c_value

    z_r_i1, z_d_i1, _ = encoder.encode(obs_i1)
    z_r_j1, z_d_j1, _ = encoder.encode(obs_j1)
    z_r_i2, z_d_i2, _ = encoder.encode(obs_i2)
    z_r_j2, z_d_j2, _ = encoder.encode(obs_j2)

    target_r = _const(np.abs(np.asarray(reward_i) - np.asarray(reward_j)))
    if w2_target is None:
        w2_target = pair_w2_target(dynamics, z_d_i1, z_d_j1, action_i, action_j)
    target_d = _const(w2_target)

    r_term_1 = dc.square(dc.sub(meta_r(z_r_i1, z_r_j1), target_r))
    d_term_1 = dc.square(dc.sub(meta_d(z_d_i1, z_d_j1), target_d))
    r_term_2 = dc.square(dc.sub(meta_r(z_r_j2, z_r_i2), target_r))
    d_term_2 = dc.square(dc.sub(meta_d(z_d_j2, z_d_i2), target_d))

    reward_part = dc.scalar_mul(dc.add(r_term_1, r_term_2), float(reward_weight))
    dynamics_part = dc.scalar_mul(dc.add(d_term_1, d_term_2), float(c_value))
    loss = dc.tmean(dc.add(reward_part, dynamics_part))

    diag = {
        "reward_term": float(np.mean(reward_part.data)),
        "dynamics_term": float(np.mean(dynamics_part.data)),
        "w2_target_mean": float(np.mean(target_d.data)),
        "reward_gap_mean": float(np.mean(target_r.data)),
    }
    return loss, diag


def combined_repr_loss(encoder, meta, dynamics,
                       obs_i1, obs_j1, obs_i2, obs_j2,
                       action_i, action_j, reward_i, reward_j,
                       w2_target=None):
    """Single-embedding variant: one meta-learner over [z_r : z_d] regresses
    the unweighted sum of the reward gap and the W2 target."""
    _check_batch("combined_repr_loss", obs_i1, obs_j1, obs_i2, obs_j2)

    def embed(obs):
        z_r, z_d, _ = encoder.encode(obs)
        return dc.concat([z_r, z_d], axis=1), z_d

    z_i1, z_d_i1 = embed(obs_i1)
    z_j1, z_d_j1 = embed(obs_j1)
    z_i2, _ = embed(obs_i2)
    z_j2, _ = embed(obs_j2)

    w2 = w2_target
    if w2 is None:
        w2 = pair_w2_target(dynamics, z_d_i1, z_d_j1, action_i, action_j)
    target = _const(np.abs(np.asarray(reward_i) - np.asarray(reward_j)) + w2)

    term_1 = dc.square(dc.sub(meta(z_i1, z_j1), target))
    term_2 = dc.square(dc.sub(meta(z_j2, z_i2), target))
    loss = dc.tmean(dc.add(term_1, term_2))
    diag = {
        "reward_term": float(np.mean(term_1.data + term_2.data)),
        "dynamics_term": 0.0,
        "w2_target_mean": float(np.mean(w2)),
        "reward_gap_mean": float(np.mean(np.abs(np.asarray(reward_i) - np.asarray(reward_j)))),
    }
    return loss, diag


def l1_baseline_loss(encoder, dynamics, obs_i1, obs_j1,
                     action_i, action_j, reward_i, reward_j, gamma,
                     w2_target=None):
    """L1-distance objective: the embedding distance itself regresses onto
    the fixed-weight target |r_i - r_j| + gamma * W2 (no meta-learners).

    The single embedding is the concatenation of both heads; the target is
    fully detached, as in the main representation loss.
    """
    _check_batch("l1_baseline_loss", obs_i1, obs_j1, action_i, action_j)
    z_r_i, z_d_i, _ = encoder.encode(obs_i1)
    z_r_j, z_d_j, _ = encoder.encode(obs_j1)
    phi_i = dc.concat([z_r_i, z_d_i], axis=1)
    phi_j = dc.concat([z_r_j, z_d_j], axis=1)

    w2 = w2_target
    if w2 is None:
        w2 = pair_w2_target(dynamics, z_d_i, z_d_j, action_i, action_j)
    target = _const(np.abs(np.asarray(reward_i) - np.asarray(reward_j)) + gamma * w2)

    l1 = dc.tsum(dc.absval(dc.sub(phi_i, phi_j)), axis=1)
    loss = dc.tmean(dc.square(dc.sub(l1, target)))
    diag = {
        "reward_term": float(loss.data),
        "dynamics_term": 0.0,
        "w2_target_mean": float(np.mean(w2)),
        "reward_gap_mean": float(np.mean(np.abs(np.asarray(reward_i) - np.asarray(reward_j)))),
    }
    return loss, diag


def target_value(target_critic, target_encoder, actor, online_encoder,
                 obs_n1, obs_n2, reward, done, gamma, alpha, c_bar,
                 rng, entropy_sign=-1.0, fixed_weights=None,
                 share_full_encoder=False):
    """Bootstrapped per-sample target y, fully detached (returned as numpy).

    y = r + (1 - done) * gamma * (1/2) * sum over the two next-state crops of
    [min_k Qbar_k + entropy_sign * alpha * log pi(a'|s')], with fresh action
    samples from the current policy on each crop.  ``entropy_sign`` is -1
    for the usual soft value (entropy bonus); +1 reproduces the alternative
    printed convention.  ``c_bar`` is the target-side dynamics weight.
    """
    _check_batch("target_value", obs_n1, obs_n2)
    if fixed_weights is None:
        w_r, w_d = 1.0 - c_bar, c_bar
    else:
        w_r, w_d = fixed_weights

    values = []
    with frozen(actor, online_encoder.conv, online_encoder.head_r, online_encoder.head_d):
        for obs_n in (obs_n1, obs_n2):
            feats = online_encoder.conv(obs_n)
            if share_full_encoder:
                feats = dc.concat(
                    [online_encoder.head_r(feats), online_encoder.head_d(feats)], axis=1
                )
            eps = rng.standard_normal((obs_n.shape[0], actor.action_dim)).astype(np.float32)
            action_n, log_pi = actor.sample(feats, eps=eps)
            z_r, z_d, _ = target_encoder.encode(obs_n)
            q1, q2 = target_critic(z_r, z_d, action_n,
                                   w_r=_const(w_r), w_d=_const(w_d))
            q_min = np.minimum(q1.data, q2.data)
            values.append(q_min + entropy_sign * alpha * log_pi.data)

    v = 0.5 * (values[0] + values[1])
    y = np.asarray(reward, dtype=np.float32) + (1.0 - np.asarray(done, dtype=np.float32)) * gamma * v
    return y.astype(np.float32)


def q_loss(critic, encoder, obs_1, obs_2, action, y, c=None, fixed_weights=None):
    """DrQ-regularized double-Q regression against the detached target y.

    loss = sum over heads k of mean_B (1/2)[(Q_k(aug1) - y)^2 + (Q_k(aug2) - y)^2].

    ``c`` is the live balance-weight tensor — this is the one loss whose
    gradient reaches its logits.  ``fixed_weights`` (floats) replaces it for
    the fixed-weight variants.
    """
    _check_batch("q_loss", obs_1, obs_2, action)
    if (c is None) == (fixed_weights is None):
        raise ContractViolation("q_loss: pass exactly one of c / fixed_weights")
    if c is not None:
        w_r = dc.sub(_const(1.0), c)
        w_d = c
    else:
        w_r, w_d = _const(fixed_weights[0]), _const(fixed_weights[1])

    y_t = _const(y)
    total = None
    q_first = None
    phi_norms = None
    for obs in (obs_1, obs_2):
        z_r, z_d, _ = encoder.encode(obs)
        if phi_norms is None:
            phi_norms = (
                float(np.abs(z_r.data).sum(axis=1).mean() / z_r.shape[1]),
                float(np.abs(z_d.data).sum(axis=1).mean() / z_d.shape[1]),
            )
        q1, q2 = critic(z_r, z_d, action, w_r=w_r, w_d=w_d)
        if q_first is None:
            q_first = float(np.mean(q1.data))
        term = dc.scalar_mul(dc.add(dc.square(dc.sub(q1, y_t)), dc.square(dc.sub(q2, y_t))), 0.5)
        total = term if total is None else dc.add(total, term)

    loss = dc.tmean(total)
    diag = {
        "q_mean": q_first,
        "target_mean": float(np.mean(y)),
        "phi_r_norm": phi_norms[0],
        "phi_d_norm": phi_norms[1],
    }
    return loss, diag


def actor_loss(actor, encoder, critic, obs_1, alpha, c_value, rng,
               fixed_weights=None, share_full_encoder=False):
    """E[alpha log pi(a|s^(1)) - min_k Q_k(s^(1), a)] with reparameterized a.

    Everything except the policy parameters is frozen: conv features are
    constants, and the critic weights are untracked so only d/da flows back
    through Q into the policy.  ``share_full_encoder`` switches the actor's
    input from conv features to the full embedding [z_r : z_d] (still a
    constant here).  Returns the loss plus the sampled log_pi (numpy) for
    the temperature update.
    """
    if fixed_weights is None:
        w_r, w_d = 1.0 - c_value, c_value
    else:
        w_r, w_d = fixed_weights

    with frozen(encoder.conv, encoder.head_r, encoder.head_d, critic):
        feats = encoder.conv(obs_1)
        z_r = encoder.head_r(feats)
        z_d = encoder.head_d(feats)
        actor_in = dc.concat([z_r, z_d], axis=1) if share_full_encoder else feats
        eps = rng.standard_normal((obs_1.shape[0], actor.action_dim)).astype(np.float32)
        action, log_pi = actor.sample(actor_in, eps=eps)
        q1, q2 = critic(z_r, z_d, action, w_r=_const(w_r), w_d=_const(w_d))
        q_min = dc.minimum(q1, q2)
        loss = dc.tmean(dc.sub(dc.scalar_mul(log_pi, float(alpha)), q_min))

    diag = {
        "entropy_est": float(-np.mean(log_pi.data)),
        "actor_q_mean": float(np.mean(q_min.data)),
    }
    return loss, log_pi.data.copy(), diag


def alpha_loss(log_alpha, log_pi, target_entropy):
    """Temperature objective: alpha * (entropy estimate - target entropy).

    ``log_pi`` is a detached sample array from the actor update; gradient
    reaches log_alpha only.  More entropy than the target drives alpha down,
    less drives it up; alpha = exp(log_alpha) stays positive.
    """
    gap = float(np.mean(-np.asarray(log_pi) - target_entropy))
    loss = dc.scalar_mul(dc.exp(log_alpha), gap)
    return loss, {"entropy_gap": gap}


def dynamics_loss(dynamics, encoder, obs_1, obs_n1, action):
    """Scaled squared error of the latent forward model on crop (1).

    mean over batch and dims of [(phi_d(s'^(1)) - mu) / (2 sigma)]^2 where
    (mu, sigma) = P(. | phi_d(s^(1)), a).  Both embeddings are constants
    here — only the transition model trains.  Not a proper likelihood (no
    log-sigma term); the model's sigma clamp keeps it bounded.
    """
    _check_batch("dynamics_loss", obs_1, obs_n1, action)
    with frozen(encoder.conv, encoder.head_r, encoder.head_d):
        _, z_d, _ = encoder.encode(obs_1)
        _, z_d_next, _ = encoder.encode(obs_n1)
    mu, sigma = dynamics(z_d, action)
    scaled = dc.div(dc.sub(z_d_next, mu), dc.scalar_mul(sigma, 2.0))
    loss = dc.tmean(dc.square(scaled))
    diag = {"pred_err_mean": float(np.mean(np.abs(z_d_next.data - mu.data)))}
    return loss, diag
