"""Random-crop observation augmentation with an explicit parameter space.

The transformation pads an observation by ``p`` pixels per side with edge
replication, then takes the original-size window at an integer offset
``v = (row, col)``.  The parameter space T has (2p+1)^2 elements; v = (p, p)
recovers the identity.
"""

from __future__ import annotations

import numpy as np

from .diffcore import ContractViolation


def sample_crop_params(rng, p):
    """One offset pair drawn uniformly from T = [0, 2p] x [0, 2p]."""
    if p < 0:
        raise ContractViolation("pad size must be nonnegative")
    return int(rng.integers(0, 2 * p + 1)), int(rng.integers(0, 2 * p + 1))


def sample_crop_params_batch(rng, p, n):
    """n independent offset pairs, shape (n, 2)."""
    if p < 0:
        raise ContractViolation("pad size must be nonnegative")
    return rng.integers(0, 2 * p + 1, size=(n, 2))


def _check_offsets(v, p):
    r, c = int(v[0]), int(v[1])
    if not (0 <= r <= 2 * p and 0 <= c <= 2 * p):
        raise ContractViolation(f"crop offset {v} outside [0, {2 * p}]^2")
    return r, c


def apply_crop(obs, v, p):
    """Crop one observation (C, H, W) at offset v after edge-padding by p."""
    obs = np.asarray(obs)
    if obs.ndim != 3:
        raise ContractViolation(f"apply_crop: expected (C, H, W), got {obs.shape}")
    r, c = _check_offsets(v, p)
    if p == 0:
        return obs.copy()
    H, W = obs.shape[1], obs.shape[2]
    padded = np.pad(obs, ((0, 0), (p, p), (p, p)), mode="edge")
    return padded[:, r : r + H, c : c + W].copy()


def apply_crop_batch(batch, vs, p):
    """Crop a batch (B, C, H, W) with one offset pair per sample."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ContractViolation(f"apply_crop_batch: expected (B, C, H, W), got {batch.shape}")
    vs = np.asarray(vs)
    if vs.shape != (batch.shape[0], 2):
        raise ContractViolation(f"offsets shape {vs.shape} != ({batch.shape[0]}, 2)")
    if p == 0:
        if (vs != 0).any():
            raise ContractViolation("nonzero offsets with p=0")
        return batch.copy()
    if vs.min() < 0 or vs.max() > 2 * p:
        raise ContractViolation(f"crop offsets outside [0, {2 * p}]")
    B, C, H, W = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (H, W), axis=(2, 3))
    return win[np.arange(B), :, vs[:, 0], vs[:, 1]]
