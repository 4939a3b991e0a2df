"""Run configuration: one flat, JSON-serializable record.

Every knob of a run lives here — environment, network sizes, training
hyperparameters, ablation switches, and harness cadence — so that a run is
fully reconstructible from the resolved config written into its output
directory.  Defaults are desk-scale (48x48 frames, small nets); the
reference-scale constants (84x84x9 observations, 1024-wide critics, batch
128, million-transition buffer) are documented per field below and can be
requested verbatim through a config file.

Unknown keys are rejected rather than ignored: a typo in a config file
must fail loudly, not silently run the default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .diffcore import ContractViolation

BACKGROUND_MODES = ("none", "noise", "scroll")


@dataclass
class RunConfig:
    # run identity
    seed: int = 0
    out_dir: str = "runs/default"
    total_steps: int = 50_000      # environment frames (action repeats included)

    # environment
    env_frame_size: int = 48       # reference scale: 84
    env_frame_stack: int = 2       # reference scale: 3 (rgb -> 9 channels)
    env_color: str = "gray"
    env_action_repeat: int = 4
    env_episode_len: int = 250     # decisions per episode
    env_background: str = "none"
    env_background_seed: int = 0

    # networks
    conv_channels: int = 16        # reference scale: 32
    z_r: int = 32                  # reference scale: 50
    z_d: int = 32                  # reference scale: 50
    critic_hidden: int = 256       # reference scale: 1024
    actor_hidden: tuple = (64, 256)  # reference scale: (100, 1024, 1024)
    meta_hidden: int = 50
    dynamics_hidden: int = 128     # reference scale: 512
    log_std_min: float = -10.0
    log_std_max: float = 2.0

    # training
    batch: int = 32                # reference scale: 128
    gamma: float = 0.99
    lr: float = 5e-4
    lr_alpha: float = 1e-4
    tau_q: float = 0.01
    tau_phi: float = 0.05
    update_every: int = 2          # actor / temperature / target cadence
    init_temperature: float = 0.1
    entropy_sign: float = -1.0     # -1: entropy bonus in the target; +1: penalty
    target_entropy: float | None = None  # default: -action_dim
    buffer_capacity: int = 100_000  # reference scale: 1_000_000
    warmup: int = 1_000            # env frames of uniform-random actions
    crop_pad: int = 4

    # ablations
    no_aug: bool = False
    l1_baseline: bool = False
    no_c_split: bool = False
    fixed_c: float | None = None
    weights_1_gamma: bool = False
    share_full_encoder: bool = False

    # harness cadence (0 disables periodic runs; final eval/checkpoint always happen)
    eval_every: int = 10_000       # env frames
    eval_episodes: int = 10
    checkpoint_every: int = 0

    def validate(self):
        positive = (
            "total_steps", "env_frame_size", "env_frame_stack", "env_action_repeat",
            "env_episode_len", "conv_channels", "z_r", "z_d", "critic_hidden",
            "meta_hidden", "dynamics_hidden", "batch", "lr", "lr_alpha",
            "init_temperature", "buffer_capacity", "update_every", "eval_episodes",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ContractViolation(f"config: {name} must be positive")
        for name in ("warmup", "crop_pad", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"config: {name} must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation(f"config: gamma {self.gamma} outside [0, 1)")
        for name in ("tau_q", "tau_phi"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ContractViolation(f"config: {name} outside (0, 1]")
        if self.env_background not in BACKGROUND_MODES:
            raise ContractViolation(
                f"config: env_background {self.env_background!r} not one of {BACKGROUND_MODES}"
            )
        if self.env_color not in ("gray", "rgb"):
            raise ContractViolation(f"config: env_color {self.env_color!r} unknown")
        if self.entropy_sign not in (-1.0, 1.0):
            raise ContractViolation("config: entropy_sign must be -1 or +1")
        if self.fixed_c is not None and not 0.0 < self.fixed_c < 1.0:
            raise ContractViolation(f"config: fixed_c {self.fixed_c} outside (0, 1)")
        if not (isinstance(self.actor_hidden, (tuple, list)) and self.actor_hidden
                and all(int(w) > 0 for w in self.actor_hidden)):
            raise ContractViolation("config: actor_hidden must be a nonempty list of widths")
        # the representation-loss variants are mutually exclusive, and the
        # fixed-weight switches all remove the adaptive c they would configure
        weight_switches = sum(
            (self.no_c_split, self.fixed_c is not None, self.weights_1_gamma)
        )
        if weight_switches > 1:
            raise ContractViolation(
                "config: no_c_split / fixed_c / weights_1_gamma are mutually exclusive"
            )
        if self.l1_baseline and self.no_c_split:
            raise ContractViolation("config: l1_baseline and no_c_split both replace the "
                                    "representation loss; pick one")
        return self

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        return d

    @classmethod
    def from_dict(cls, raw):
        merged = _from_known_keys(cls, raw)
        merged.actor_hidden = tuple(int(w) for w in merged.actor_hidden)
        return merged.validate()

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(_read_json_object(path))

    def write_resolved(self, path):
        """Serialize every field, sorted, for byte-reproducible run records."""
        _write_sorted_json(self.to_dict(), path)


@dataclass
class FitConfig:
    """Setup for the exact-target regression comparison (meta-learner vs L1).

    The defaults are calibrated so the comparison is structural rather
    than an optimization race: 12 states give 66 pairwise targets while
    the 4 embedding coordinates give the L1 variant only 48 degrees of
    freedom, so a generic metric is out of its reach no matter how long
    it trains, while the free-form head can still fit.  mdp_seed picks an
    instance where that floor is comfortably away from zero.
    """

    seed: int = 0
    out_dir: str = "runs/fit"
    n_states: int = 12
    n_actions: int = 3
    mdp_seed: int = 4
    c: float = 0.5
    steps: int = 1200
    lr: float = 1e-3
    trials: int = 3
    smooth_window: int = 100
    frame_size: int = 48
    conv_channels: int = 8
    z_r: int = 2
    z_d: int = 2
    meta_hidden: int = 50

    def validate(self):
        for name in ("n_states", "n_actions", "steps", "lr", "trials",
                     "smooth_window", "frame_size", "conv_channels",
                     "z_r", "z_d", "meta_hidden"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"config: {name} must be positive")
        if not 0.0 < self.c < 1.0:
            raise ContractViolation(f"config: c {self.c} outside (0, 1)")
        if self.n_states < 2:
            raise ContractViolation("config: n_states must be >= 2")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw):
        return _from_known_keys(cls, raw).validate()

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(_read_json_object(path))

    def write_resolved(self, path):
        _write_sorted_json(self.to_dict(), path)


# accepted JSON value types per field annotation (bool is an int in Python,
# so it is only admitted where the annotation says bool)
_FIELD_KINDS = {
    "int": (int,),
    "float": (int, float),
    "str": (str,),
    "bool": (bool,),
    "float | None": (int, float, type(None)),
    "tuple": (list, tuple),
}


def _from_known_keys(cls, raw):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ContractViolation(f"config: unknown keys {unknown}")
    for name, value in raw.items():
        kind = fields[name].type
        accepted = _FIELD_KINDS.get(kind)
        if accepted is None:
            continue
        bad = isinstance(value, bool) and bool not in accepted
        bad = bad or not isinstance(value, accepted)
        if kind == "tuple" and not bad:
            bad = any(isinstance(w, bool) or not isinstance(w, int) for w in value)
        if bad:
            raise ContractViolation(f"config: {name} must be {kind}, got {value!r}")
    return cls(**dict(raw))


def _read_json_object(path):
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ContractViolation("config: file must hold a JSON object")
    return raw


def _write_sorted_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
