"""Transition storage and shuffled-pair batch sampling.

Observations are quantized to uint8 on write (pixels are born in [0, 1]
with 1/255 granularity anyway) so a six-figure buffer of stacked frames
fits in memory; they come back as float32 in [0, 1] on sampling.

``sample_pair_batch`` implements the pairing the similarity losses need:
draw a batch uniformly with replacement, then pair it with a uniform
random permutation of itself.  Self-pairs are allowed; they contribute
zero-target regression terms, which is consistent with the losses.
"""

from __future__ import annotations

import json

import numpy as np

from .diffcore import ContractViolation, load_tensor_map, save_tensor_map


class ReplayBuffer:
    """Fixed-capacity ring buffer of (obs, action, reward, next_obs, done)."""

    def __init__(self, capacity, obs_shape, action_dim):
        if capacity <= 0:
            raise ContractViolation("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)
        self.action_dim = int(action_dim)
        self.obs = np.zeros((self.capacity, *self.obs_shape), dtype=np.uint8)
        self.next_obs = np.zeros((self.capacity, *self.obs_shape), dtype=np.uint8)
        self.action = np.zeros((self.capacity, self.action_dim), dtype=np.float32)
        self.reward = np.zeros(self.capacity, dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    @staticmethod
    def _quantize(obs):
        return np.round(np.clip(obs, 0.0, 1.0) * 255.0).astype(np.uint8)

    @staticmethod
    def _dequantize(obs_u8):
        return obs_u8.astype(np.float32) / 255.0

    def push(self, obs, action, reward, next_obs, done):
        obs = np.asarray(obs)
        next_obs = np.asarray(next_obs)
        action = np.asarray(action, dtype=np.float32).reshape(-1)
        if obs.shape != self.obs_shape or next_obs.shape != self.obs_shape:
            raise ContractViolation(
                f"obs shape {obs.shape}/{next_obs.shape} != {self.obs_shape}"
            )
        if action.shape != (self.action_dim,):
            raise ContractViolation(f"action shape {action.shape} != ({self.action_dim},)")
        k = self.cursor
        self.obs[k] = self._quantize(obs)
        self.next_obs[k] = self._quantize(next_obs)
        self.action[k] = action
        self.reward[k] = float(reward)
        self.done[k] = bool(done)
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _gather(self, idx):
        return {
            "obs": self._dequantize(self.obs[idx]),
            "action": self.action[idx].copy(),
            "reward": self.reward[idx].copy(),
            "next_obs": self._dequantize(self.next_obs[idx]),
            "done": self.done[idx].copy(),
        }

    def sample(self, batch_size, rng):
        if self.size < batch_size:
            raise ContractViolation(f"buffer holds {self.size} < batch {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return self._gather(idx)

    def sample_pair_batch(self, batch_size, rng):
        """(batch_i, batch_j) where batch_j is a shuffled copy of batch_i.

        Also returns the permutation so callers can verify the pairing.
        """
        if self.size < batch_size:
            raise ContractViolation(f"buffer holds {self.size} < batch {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        perm = rng.permutation(batch_size)
        return self._gather(idx), self._gather(idx[perm]), perm

    # -- snapshots -----------------------------------------------------------

    def save(self, path):
        """Snapshot the filled prefix as a tensor map plus a JSON manifest."""
        path = str(path)
        n = self.size
        order = (np.arange(n) + (self.cursor - n)) % self.capacity  # oldest first
        save_tensor_map(
            path,
            {
                "obs": self._dequantize(self.obs[order]),
                "next_obs": self._dequantize(self.next_obs[order]),
                "action": self.action[order],
                "reward": self.reward[order],
                "done": self.done[order].astype(np.float32),
            },
        )
        manifest = {
            "capacity": self.capacity,
            "size": n,
            "obs_shape": list(self.obs_shape),
            "action_dim": self.action_dim,
        }
        with open(path + ".json", "w") as fh:
            json.dump(manifest, fh)

    @classmethod
    def load(cls, path):
        path = str(path)
        with open(path + ".json") as fh:
            manifest = json.load(fh)
        tensors = load_tensor_map(path)
        buf = cls(manifest["capacity"], manifest["obs_shape"], manifest["action_dim"])
        n = manifest["size"]
        buf.obs[:n] = cls._quantize(tensors["obs"])
        buf.next_obs[:n] = cls._quantize(tensors["next_obs"])
        buf.action[:n] = tensors["action"]
        buf.reward[:n] = tensors["reward"]
        buf.done[:n] = tensors["done"] > 0.5
        buf.size = n
        buf.cursor = n % buf.capacity
        return buf
