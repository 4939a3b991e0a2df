"""Network blocks: shared conv trunk, decomposed encoder heads, similarity
meta-learners, latent dynamics model, double-Q critic, squashed-Gaussian
actor, and the adaptive branch weight.

Sizes are config values so the same blocks serve the full-scale layout
(84x84x9 input, 32-channel conv, 50-dim embeddings, 1024-wide critic) and a
desk-scale one that trains in minutes on a CPU.
"""

from __future__ import annotations

import copy

import numpy as np

from . import diffcore as dc
from .diffcore import ContractViolation, Tensor

RELU_GAIN = float(np.sqrt(2.0))


def orthogonal_init(rng, shape, gain):
    """Orthogonal weight matrix (rows or columns, whichever fits), scaled."""
    n_rows = shape[0]
    n_cols = int(np.prod(shape[1:]))
    flat = (n_rows, n_cols) if n_rows >= n_cols else (n_cols, n_rows)
    a = rng.standard_normal(flat)
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # make the factorization unique
    if n_rows < n_cols:
        q = q.T
    out = np.ascontiguousarray(gain * q).reshape(shape)
    return np.ascontiguousarray(out, dtype=np.float32)


class Dense:
    """Fully-connected layer y = x @ w + b."""

    def __init__(self, rng, n_in, n_out, gain=RELU_GAIN):
        self.w = Tensor(orthogonal_init(rng, (n_in, n_out), gain), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return dc.add(dc.matmul(x, self.w), self.b)

    @property
    def params(self):
        return [self.w, self.b]


class Conv:
    """3x3 valid convolution with bias; stride 1 or 2."""

    def __init__(self, rng, c_in, c_out, stride, gain=RELU_GAIN):
        self.w = Tensor(orthogonal_init(rng, (c_out, c_in, 3, 3), gain), requires_grad=True)
        self.b = Tensor(np.zeros((c_out, 1, 1), dtype=np.float32), requires_grad=True)
        self.stride = stride

    def __call__(self, x):
        return dc.add(dc.conv2d(x, self.w, stride=self.stride), self.b)

    @property
    def params(self):
        return [self.w, self.b]


def _mlp_forward(layers, x):
    for layer in layers[:-1]:
        x = dc.relu(layer(x))
    return layers[-1](x)


class SharedConvNet:
    """Four 3x3 conv layers, stride 2 then 1/1/1, ReLU after each.

    A single instance feeds both encoder heads and (read-only) the actor.
    """

    def __init__(self, rng, in_channels, height, width, channels=32):
        self.in_shape = (in_channels, height, width)
        self.channels = channels
        strides = (2, 1, 1, 1)
        chans = (in_channels, channels, channels, channels, channels)
        self.layers = [
            Conv(rng, chans[k], chans[k + 1], strides[k]) for k in range(4)
        ]
        h, w = height, width
        for s in strides:
            h = (h - 3) // s + 1
            w = (w - 3) // s + 1
            if h < 1 or w < 1:
                raise ContractViolation(f"frame {height}x{width} too small for the conv stack")
        self.out_hw = (h, w)
        self.feat_dim = channels * h * w

    def __call__(self, obs):
        if obs.ndim != 4 or obs.shape[1:] != self.in_shape:
            raise ContractViolation(
                f"conv input shape {obs.shape[1:]} != expected {self.in_shape}"
            )
        x = obs
        for layer in self.layers:
            x = dc.relu(layer(x))
        return dc.reshape(x, (obs.shape[0], self.feat_dim))

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]


class Encoder:
    """Shared conv trunk plus one linear head per representation branch."""

    def __init__(self, rng, in_channels, height, width, z_r, z_d, channels=32):
        self.conv = SharedConvNet(rng, in_channels, height, width, channels)
        self.head_r = Dense(rng, self.conv.feat_dim, z_r, gain=1.0)
        self.head_d = Dense(rng, self.conv.feat_dim, z_d, gain=1.0)
        self.z_r = z_r
        self.z_d = z_d

    def encode(self, obs):
        """obs (B, C, H, W) in [0, 1] -> (z_r, z_d, conv_features)."""
        if float(obs.data.min()) < -1e-6 or float(obs.data.max()) > 1.0 + 1e-6:
            raise ContractViolation("observation values must lie in [0, 1]")
        feats = self.conv(obs)
        return self.head_r(feats), self.head_d(feats), feats

    @property
    def params(self):
        return self.conv.params + self.head_r.params + self.head_d.params


class MetaLearner:
    """Two-layer MLP over a pair of embeddings -> one unconstrained real."""

    def __init__(self, rng, z_dim, hidden=50):
        self.l1 = Dense(rng, 2 * z_dim, hidden)
        self.l2 = Dense(rng, hidden, 1, gain=1.0)
        self.z_dim = z_dim

    def __call__(self, z_a, z_b):
        if z_a.shape[-1] != self.z_dim or z_b.shape[-1] != self.z_dim:
            raise ContractViolation(
                f"meta-learner inputs {z_a.shape}, {z_b.shape} != dim {self.z_dim}"
            )
        h = dc.relu(self.l1(dc.concat([z_a, z_b], axis=1)))
        return dc.reshape(self.l2(h), (z_a.shape[0],))

    @property
    def params(self):
        return self.l1.params + self.l2.params


class DynamicsModel:
    """Latent forward model: [z_d : action] -> diagonal Gaussian over z_d'.

    The network emits log-sigma, hard-clamped to [log 1e-2, log 1e1] before
    exponentiation; the squared-error objective it is trained with has no
    log-sigma term, so without the clamp sigma -> inf would be a minimizer.
    """

    SIGMA_MIN = 1e-2
    SIGMA_MAX = 1e1

    def __init__(self, rng, z_d, action_dim, hidden=512):
        self.l1 = Dense(rng, z_d + action_dim, hidden)
        self.l2 = Dense(rng, hidden, 2 * z_d, gain=1.0)
        self.z_d = z_d

    def __call__(self, z_d, action):
        out = self.l2(dc.relu(self.l1(dc.concat([z_d, action], axis=1))))
        mu = dc.slice_last(out, 0, self.z_d)
        log_sigma = dc.clamp(
            dc.slice_last(out, self.z_d, 2 * self.z_d),
            float(np.log(self.SIGMA_MIN)),
            float(np.log(self.SIGMA_MAX)),
        )
        return mu, dc.exp(log_sigma)

    @property
    def params(self):
        return self.l1.params + self.l2.params


class Critic:
    """Double Q over the weighted concatenation [w_r z_r : w_d z_d : action].

    The standard branch weights are (w_r, w_d) = (1-c, c); fixed-weight
    variants pass their own constants, and w=None leaves a branch unscaled.
    """

    def __init__(self, rng, z_r, z_d, action_dim, hidden=1024):
        n_in = z_r + z_d + action_dim
        self.q1 = [Dense(rng, n_in, hidden), Dense(rng, hidden, hidden), Dense(rng, hidden, 1, gain=1.0)]
        self.q2 = [Dense(rng, n_in, hidden), Dense(rng, hidden, hidden), Dense(rng, hidden, 1, gain=1.0)]

    def __call__(self, z_r, z_d, action, w_r=None, w_d=None):
        parts = [
            z_r if w_r is None else dc.mul(z_r, w_r),
            z_d if w_d is None else dc.mul(z_d, w_d),
            action,
        ]
        x = dc.concat(parts, axis=1)
        B = x.shape[0]
        q1 = dc.reshape(_mlp_forward(self.q1, x), (B,))
        q2 = dc.reshape(_mlp_forward(self.q2, x), (B,))
        return q1, q2

    @property
    def params(self):
        return [p for layer in self.q1 + self.q2 for p in layer.params]


class Actor:
    """Squashed-Gaussian policy over conv features.

    The head outputs mean and a raw log-std; the log-std is mapped into
    [lo, hi] by a tanh rescaling (smooth, strictly inside the bounds).
    Sampling uses the reparameterization trick and the returned log-density
    includes the exact tanh change-of-variables correction.
    """

    def __init__(self, rng, feat_dim, action_dim, hidden=(100, 1024, 1024), log_std_bounds=(-10.0, 2.0)):
        widths = [feat_dim, *hidden, 2 * action_dim]
        self.layers = [
            Dense(rng, widths[k], widths[k + 1], gain=RELU_GAIN if k + 2 < len(widths) else 1.0)
            for k in range(len(widths) - 1)
        ]
        self.action_dim = action_dim
        self.log_std_lo, self.log_std_hi = log_std_bounds

    def distribution(self, feats):
        out = _mlp_forward(self.layers, feats)
        mean = dc.slice_last(out, 0, self.action_dim)
        raw = dc.slice_last(out, self.action_dim, 2 * self.action_dim)
        half_span = 0.5 * (self.log_std_hi - self.log_std_lo)
        log_std = dc.add(
            Tensor(np.float32(self.log_std_lo + half_span)),
            dc.scalar_mul(dc.tanh(raw), half_span),
        )
        return mean, dc.exp(log_std)

    def sample(self, feats, rng=None, eps=None, deterministic=False):
        """(action, log_prob); log_prob is None in deterministic mode."""
        mean, std = self.distribution(feats)
        if deterministic:
            return dc.tanh(mean), None
        if eps is None:
            eps = rng.standard_normal(mean.shape).astype(np.float32)
        u = dc.gaussian_sample(mean, std, Tensor(eps))
        action = dc.tanh(u)
        log_prob = dc.sub(dc.gaussian_log_density(u, mean, std), dc.tanh_log_jacobian(u))
        return action, log_prob

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]


class AdaptiveWeight:
    """Learnable two-logit softmax weight.

    value() returns c = softmax(eta)[0], the coefficient on the dynamics
    branch; the reward branch carries (1 - c).  Both lie strictly inside
    (0, 1) until the logit gap exceeds the float32 softmax saturation point
    (~17 nats, far beyond what bounded-length training reaches at the
    default learning rate).
    """

    def __init__(self, init=(0.0, 0.0)):
        self.eta = Tensor(np.asarray(init, dtype=np.float32), requires_grad=True)

    def value(self):
        probs = dc.softmax(dc.reshape(self.eta, (1, 2)))
        return dc.reshape(dc.slice_last(probs, 0, 1), ())

    @property
    def params(self):
        return [self.eta]


def target_copy(block):
    """Value-identical deep copy with gradient tracking switched off.

    Target networks are read-only in every loss (their outputs are already
    detached by construction) and are advanced only via soft_update.
    """
    twin = copy.deepcopy(block)
    for p in twin.params:
        p.requires_grad = False
        p.grad = None
    return twin


def param_count(block):
    return int(sum(p.size for p in block.params))


def shape_audit(blocks):
    """JSON-ready report: block name -> parameter count (+ conv geometry)."""
    report = {}
    for name, block in blocks.items():
        entry = {"params": param_count(block)}
        conv = getattr(block, "conv", block if isinstance(block, SharedConvNet) else None)
        if isinstance(conv, SharedConvNet):
            entry["conv_in"] = list(conv.in_shape)
            entry["conv_out_hw"] = list(conv.out_hw)
            entry["feat_dim"] = conv.feat_dim
        report[name] = entry
    report["total"] = {"params": sum(v["params"] for k, v in report.items() if k != "total")}
    return report
