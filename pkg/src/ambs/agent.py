"""The full learner: parameter blocks, update schedule, collection, eval.

One training step, in order: sample a shuffled-pair batch; update the
double critic (the only loss whose gradient reaches the balance logits);
every ``update_every``-th step update the actor and the temperature;
update the encoders + similarity heads with the behavioral regression;
update the latent dynamics model; and finally (same cadence as the actor)
soft-update the target critic, target encoder, and target balance logits.
The actor update precedes the representation update as written in the
reference procedure; since the actor's loss detaches the encoder, the two
commute (asserted in tests).

A non-finite loss value (or gradient) skips exactly that one update; the
step still counts, and the skip is recorded so the harness can abort on a
storm of them.
"""

from __future__ import annotations

import json

import numpy as np

from . import augment, bisim, envs, losses, nets
from . import diffcore as dc
from .diffcore import ContractViolation, Tensor


class NumericalFailure(RuntimeError):
    """Training produced non-finite losses for too many consecutive steps."""


def _softmax_first(eta):
    e = eta - eta.max()
    p = np.exp(e)
    return float(p[0] / p.sum())


class Agent:
    """All parameter blocks of the learner plus their optimizer state."""

    def __init__(self, cfg, rng, action_dim=2):
        cfg.validate()
        self.cfg = cfg
        self.action_dim = int(action_dim)
        ch = (1 if cfg.env_color == "gray" else 3) * cfg.env_frame_stack
        self.obs_shape = (ch, cfg.env_frame_size, cfg.env_frame_size)

        self.encoder = nets.Encoder(
            rng, ch, cfg.env_frame_size, cfg.env_frame_size,
            cfg.z_r, cfg.z_d, channels=cfg.conv_channels,
        )
        actor_in = cfg.z_r + cfg.z_d if cfg.share_full_encoder else self.encoder.conv.feat_dim
        self.actor = nets.Actor(
            rng, actor_in, action_dim, hidden=tuple(cfg.actor_hidden),
            log_std_bounds=(cfg.log_std_min, cfg.log_std_max),
        )
        self.critic = nets.Critic(rng, cfg.z_r, cfg.z_d, action_dim, hidden=cfg.critic_hidden)
        if cfg.no_c_split:
            self.meta_c = nets.MetaLearner(rng, cfg.z_r + cfg.z_d, hidden=cfg.meta_hidden)
            self.meta_r = self.meta_d = None
        else:
            self.meta_r = nets.MetaLearner(rng, cfg.z_r, hidden=cfg.meta_hidden)
            self.meta_d = nets.MetaLearner(rng, cfg.z_d, hidden=cfg.meta_hidden)
            self.meta_c = None
        self.dynamics = nets.DynamicsModel(rng, cfg.z_d, action_dim, hidden=cfg.dynamics_hidden)
        self.weight = nets.AdaptiveWeight()
        self.log_alpha = Tensor(
            np.float32(np.log(cfg.init_temperature)), requires_grad=True
        )
        self.target_entropy = (
            float(cfg.target_entropy) if cfg.target_entropy is not None else -float(action_dim)
        )

        self.target_encoder = nets.target_copy(self.encoder)
        self.target_critic = nets.target_copy(self.critic)
        self.target_weight = nets.target_copy(self.weight)

        groups = {
            "q": self.critic.params + self.encoder.params
                 + (self.weight.params if self.adaptive_c else []),
            "actor": self.actor.params,
            "alpha": [self.log_alpha],
            "dynamics": self.dynamics.params,
        }
        if cfg.l1_baseline:
            groups["repr"] = self.encoder.params
        elif cfg.no_c_split:
            groups["repr"] = self.encoder.params + self.meta_c.params
        else:
            groups["repr"] = self.encoder.params + self.meta_r.params + self.meta_d.params
        self._groups = groups
        self._adam = {name: dc.AdamState(ps) for name, ps in groups.items()}
        self._lr = {name: (cfg.lr_alpha if name == "alpha" else cfg.lr) for name in groups}

        self.step = 0
        self.incidents = []

    # -- balance weight ------------------------------------------------------

    @property
    def adaptive_c(self):
        cfg = self.cfg
        return not (cfg.no_c_split or cfg.weights_1_gamma or cfg.fixed_c is not None)

    def fixed_weights(self):
        """Critic-input weights (w_r, w_d) for the ablations, None when adaptive."""
        cfg = self.cfg
        if cfg.no_c_split:
            return (1.0, 1.0)
        if cfg.weights_1_gamma:
            return (1.0, cfg.gamma)
        if cfg.fixed_c is not None:
            return (1.0 - cfg.fixed_c, cfg.fixed_c)
        return None

    def c_value(self):
        """Dynamics-branch weight as a plain float; None where c is ablated away."""
        cfg = self.cfg
        if cfg.fixed_c is not None:
            return float(cfg.fixed_c)
        if not self.adaptive_c:
            return None
        return _softmax_first(self.weight.eta.data)

    def c_bar(self):
        if not self.adaptive_c:
            return self.c_value()
        return _softmax_first(self.target_weight.eta.data)

    # -- acting --------------------------------------------------------------

    def act(self, obs, rng=None, deterministic=False):
        """Action in [-1, 1]^k for one observation (C, H, W)."""
        with losses.frozen(self.encoder, self.actor):
            obs_t = Tensor(np.asarray(obs, dtype=np.float32)[None])
            feats = self.encoder.conv(obs_t)
            if self.cfg.share_full_encoder:
                feats = dc.concat(
                    [self.encoder.head_r(feats), self.encoder.head_d(feats)], axis=1
                )
            action, _ = self.actor.sample(feats, rng=rng, deterministic=deterministic)
        return np.asarray(action.data[0], dtype=np.float64).copy()

    # -- one training step ----------------------------------------------------

    def _apply(self, name, loss):
        """Backward + Adam for one group; skip (and record) non-finite steps."""
        params = self._groups[name]
        ok = bool(np.isfinite(loss.data).all())
        if ok:
            dc.zero_grads(params)
            dc.backward(loss)
            ok = dc.adam_step(params, [p.grad for p in params], self._adam[name], self._lr[name])
        if not ok:
            self.incidents.append(name)
        dc.reset_graph()
        return ok

    def train_step(self, buffer, rng):
        cfg = self.cfg
        do_aux = self.step % cfg.update_every == 0
        self.incidents = []

        batch_i, batch_j, _ = buffer.sample_pair_batch(cfg.batch, rng)
        pad = 0 if cfg.no_aug else cfg.crop_pad

        def view(x):
            vs = augment.sample_crop_params_batch(rng, pad, x.shape[0])
            return augment.apply_crop_batch(x, vs, pad)

        obs_1, obs_2 = view(batch_i["obs"]), view(batch_i["obs"])
        next_1, next_2 = view(batch_i["next_obs"]), view(batch_i["next_obs"])
        pair_i1, pair_j1 = view(batch_i["obs"]), view(batch_j["obs"])
        pair_i2, pair_j2 = view(batch_i["obs"]), view(batch_j["obs"])
        action = Tensor(batch_i["action"])
        action_j = Tensor(batch_j["action"])

        fixed = self.fixed_weights()
        alpha = float(np.exp(self.log_alpha.data))

        # critic (+ encoder + balance logits)
        y = losses.target_value(
            self.target_critic, self.target_encoder, self.actor, self.encoder,
            Tensor(next_1), Tensor(next_2), batch_i["reward"], batch_i["done"],
            cfg.gamma, alpha, self.c_bar(), rng,
            entropy_sign=cfg.entropy_sign, fixed_weights=fixed,
            share_full_encoder=cfg.share_full_encoder,
        )
        c_tensor = self.weight.value() if fixed is None else None
        q_l, q_diag = losses.q_loss(
            self.critic, self.encoder, Tensor(obs_1), Tensor(obs_2), action, y,
            c=c_tensor, fixed_weights=fixed,
        )
        self._apply("q", q_l)

        # actor and temperature, every update_every-th step
        actor_val = None
        if do_aux:
            a_l, log_pi, _ = losses.actor_loss(
                self.actor, self.encoder, self.critic, Tensor(obs_1), alpha,
                self.c_value(), rng, fixed_weights=fixed,
                share_full_encoder=cfg.share_full_encoder,
            )
            self._apply("actor", a_l)
            actor_val = float(a_l.data)
            t_l, _ = losses.alpha_loss(self.log_alpha, log_pi, self.target_entropy)
            self._apply("alpha", t_l)

        # behavioral-similarity regression on the pair batch
        if cfg.l1_baseline:
            r_l, r_diag = losses.l1_baseline_loss(
                self.encoder, self.dynamics, Tensor(pair_i1), Tensor(pair_j1),
                action, action_j, batch_i["reward"], batch_j["reward"], cfg.gamma,
            )
        elif cfg.no_c_split:
            r_l, r_diag = losses.combined_repr_loss(
                self.encoder, self.meta_c, self.dynamics,
                Tensor(pair_i1), Tensor(pair_j1), Tensor(pair_i2), Tensor(pair_j2),
                action, action_j, batch_i["reward"], batch_j["reward"],
            )
        else:
            if cfg.weights_1_gamma:
                c_repr, w_repr = cfg.gamma, 1.0
            else:
                c_repr, w_repr = self.c_value(), None
            r_l, r_diag = losses.repr_loss(
                self.encoder, self.meta_r, self.meta_d, self.dynamics,
                Tensor(pair_i1), Tensor(pair_j1), Tensor(pair_i2), Tensor(pair_j2),
                action, action_j, batch_i["reward"], batch_j["reward"],
                c_value=c_repr, reward_weight=w_repr,
            )
        self._apply("repr", r_l)

        # latent forward model
        d_l, _ = losses.dynamics_loss(
            self.dynamics, self.encoder, Tensor(obs_1), Tensor(next_1), action
        )
        self._apply("dynamics", d_l)

        if do_aux:
            dc.soft_update(self.target_critic.params, self.critic.params, cfg.tau_q)
            dc.soft_update(self.target_encoder.params, self.encoder.params, cfg.tau_phi)
            dc.soft_update(self.target_weight.params, self.weight.params, cfg.tau_phi)

        self.step += 1
        return {
            "repr_loss": float(r_l.data),
            "reward_term": r_diag["reward_term"],
            "dynamics_term": r_diag["dynamics_term"],
            "q_loss": float(q_l.data),
            "actor_loss": actor_val,
            "alpha": float(np.exp(self.log_alpha.data)),
            "c": self.c_value(),
            "phi_r_norm": q_diag["phi_r_norm"],
            "phi_d_norm": q_diag["phi_d_norm"],
            "skipped": len(self.incidents),
        }

    # -- checkpoints -----------------------------------------------------------

    def _blocks(self):
        blocks = {
            "encoder": self.encoder,
            "actor": self.actor,
            "critic": self.critic,
            "dynamics": self.dynamics,
            "weight": self.weight,
            "target_encoder": self.target_encoder,
            "target_critic": self.target_critic,
            "target_weight": self.target_weight,
        }
        if self.meta_c is not None:
            blocks["meta_c"] = self.meta_c
        else:
            blocks["meta_r"] = self.meta_r
            blocks["meta_d"] = self.meta_d
        return blocks

    def named_arrays(self):
        """Flat name -> live parameter array view (ordered, deterministic)."""
        out = {}
        for name, block in self._blocks().items():
            for i, p in enumerate(block.params):
                out[f"{name}.{i}"] = p.data
        out["log_alpha"] = self.log_alpha.data
        return out

    def save(self, path, extra=None):
        """Write parameters to ``path`` and a JSON manifest to ``path + '.json'``.

        The manifest holds the resolved config and the step counter, which is
        everything needed to rebuild the agent for evaluation or analysis.
        Optimizer moments are deliberately not stored; checkpoints are for
        inspection, reruns come from the config + seed.
        """
        path = str(path)
        dc.save_tensor_map(path, self.named_arrays())
        manifest = {
            "format": "ambs-checkpoint-v1",
            "step": self.step,
            "action_dim": self.action_dim,
            "config": self.cfg.to_dict(),
        }
        if extra:
            manifest.update(extra)
        with open(path + ".json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest

    @classmethod
    def load(cls, path):
        from .config import RunConfig

        path = str(path)
        with open(path + ".json") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != "ambs-checkpoint-v1":
            raise ContractViolation(f"unrecognized checkpoint format in {path}.json")
        cfg = RunConfig.from_dict(manifest["config"])
        agent = cls(cfg, np.random.default_rng(0), action_dim=manifest["action_dim"])
        stored = dc.load_tensor_map(path)
        live = agent.named_arrays()
        missing = sorted(set(live) - set(stored))
        extra = sorted(set(stored) - set(live))
        if missing or extra:
            raise ContractViolation(
                f"checkpoint keys do not match agent: missing {missing}, extra {extra}"
            )
        for name, arr in live.items():
            if stored[name].shape != arr.shape:
                raise ContractViolation(
                    f"checkpoint {name}: shape {stored[name].shape} != {arr.shape}"
                )
            arr[...] = stored[name]
        agent.step = int(manifest["step"])
        return agent, manifest


# ---------------------------------------------------------------------------
# Interaction and evaluation
# ---------------------------------------------------------------------------


class Collector:
    """Single-environment interaction loop feeding the replay buffer.

    Counts environment frames (decisions x action_repeat) — the step unit
    used by configs, warmup, and the metrics log.  Episode ends in the
    point-mass environment are timeouts, not terminal states, so pushed
    transitions carry done=False and targets bootstrap across the boundary.
    """

    def __init__(self, env, buffer):
        self.env = env
        self.buffer = buffer
        self.env_frames = 0
        self.episodes = 0
        self._obs = None
        self._ep_return = 0.0

    def collect_step(self, agent, rng, warmup):
        """One decision step; before ``warmup`` env frames, actions are uniform."""
        if self._obs is None:
            self._obs = self.env.reset(int(rng.integers(2**31 - 1)))
            self._ep_return = 0.0
        if self.env_frames < warmup:
            action = rng.uniform(-1.0, 1.0, size=self.env.action_dim)
        else:
            action = agent.act(self._obs, rng=rng)
        next_obs, reward, done = self.env.step(action)
        self.buffer.push(self._obs, action, reward, next_obs, False)
        self.env_frames += self.env.action_repeat
        self._ep_return += reward
        completed = None
        if done:
            completed = self._ep_return
            self.episodes += 1
            self._obs = self.env.reset(int(rng.integers(2**31 - 1)))
            self._ep_return = 0.0
        else:
            self._obs = next_obs
        return {"reward": reward, "done": done, "episode_return": completed}


def evaluate(agent, env, episodes, seed):
    """Mean/stddev return of the deterministic policy over fresh episodes."""
    if episodes < 1:
        raise ContractViolation("evaluate: episodes must be >= 1")
    returns = []
    for k in range(episodes):
        obs = env.reset(int(seed) + k)
        total, done = 0.0, False
        while not done:
            obs, reward, done = env.step(agent.act(obs, deterministic=True))
            total += reward
        returns.append(total)
    arr = np.asarray(returns, dtype=np.float64)
    return {
        "episodes": int(episodes),
        "mean_return": float(arr.mean()),
        "std_return": float(arr.std()),
        "returns": [float(x) for x in arr],
    }


# ---------------------------------------------------------------------------
# Oracle-fit harness (exact-target regression, meta-learner vs L1 forms)
# ---------------------------------------------------------------------------


def build_fit_dataset(rng, n_states, c, n_actions=3, frame_size=48):
    """Exact similarity targets on a random tabular MDP, with glyph images.

    Returns the unique per-state observations (n, 1, H, W) plus all ordered
    state pairs (indices) and the combined target (1-c)|dR| + c W1(d*).
    Rendering each state once keeps the conv cost per fit step at n forward
    passes instead of n^2.
    """
    mdp = bisim.random_mdp(rng, n_states, n_actions)
    pi = bisim.random_policy(rng, mdp)
    d_star, info = bisim.bisim_fixed_point(mdp, pi, c)
    sup = bisim.emit_supervision(mdp, pi, c, d_star)
    obs = np.stack([
        envs.render_tabular(s, n_states, size=frame_size, frame_stack=1)
        for s in range(n_states)
    ])
    return {
        "obs": obs.astype(np.float32),
        "idx_i": sup["state_i"],
        "idx_j": sup["state_j"],
        "target": sup["target_total"].astype(np.float32),
        "d_star": d_star,
        "iterations": info["iterations"],
    }


def fit_to_oracle(encoder, head, dataset, steps, lr=1e-3):
    """Full-batch regression of exact behavioral-similarity targets.

    ``head`` maps an embedding pair to a scalar prediction (a MetaLearner
    or a stand-in with the same interface); ``head=None`` predicts with the
    L1 distance between the two embeddings instead, which is the whole
    comparison: a free similarity function versus one constrained to metric
    form, on identical encoders, targets, and budgets.

    Returns the loss curve as an array of length ``steps + 1``: entry t is
    the full-batch loss after t updates (entry 0 is the untrained loss).
    """
    n = dataset["obs"].shape[0]
    eye = np.eye(n, dtype=np.float32)
    sel_i = Tensor(eye[dataset["idx_i"]])
    sel_j = Tensor(eye[dataset["idx_j"]])
    target = Tensor(dataset["target"])
    obs = Tensor(dataset["obs"])

    params = list(encoder.params) + (list(head.params) if head is not None else [])
    adam = dc.AdamState(params)
    curve = np.zeros(steps + 1)

    def batch_loss():
        z_r, z_d, _ = encoder.encode(obs)
        z = dc.concat([z_r, z_d], axis=1)
        z_i = dc.matmul(sel_i, z)
        z_j = dc.matmul(sel_j, z)
        if head is not None:
            pred = head(z_i, z_j)
        else:
            pred = dc.tsum(dc.absval(dc.sub(z_i, z_j)), axis=1)
        return dc.tmean(dc.square(dc.sub(pred, target)))

    for t in range(steps):
        loss = batch_loss()
        curve[t] = float(loss.data)
        dc.zero_grads(params)
        dc.backward(loss)
        dc.adam_step(params, [p.grad for p in params], adam, lr)
        dc.reset_graph()
    loss = batch_loss()
    curve[steps] = float(loss.data)
    dc.reset_graph()
    return curve
