"""Desk-scale pixel environments with controllable background distraction.

A velocity-damped point mass moves on [-1, 1]^2 toward a fixed goal; reward
per physics tick is exp(-||pos - goal||^2 / sigma_r^2), in (0, 1].  Frames
are rendered at a configurable size, grayscale or RGB, with a background
that is black, per-tick noise, or a scrolling procedural texture.  Train
and eval splits draw their background sequences from disjoint seed ranges.

``render_tabular`` lifts discrete MDP state indices to images so the conv
encoder path can be tested against exact tabular supervision.
"""

from __future__ import annotations

import numpy as np

from .diffcore import ContractViolation

# noise-mode pixels stay below the glyph intensities (goal 0.8, agent 1.0),
# making it the mild distraction mode; scroll mode carries shaped decoys
# that are the brightest background content but stay below the true glyph
# intensities, so brightness remains a usable (if partial) foreground cue
_BG_MAX = 0.6

_EVAL_SEED_OFFSET = 1_000_003  # keeps train/eval background streams disjoint


def _split_seed(seed, split):
    if split == "train":
        return int(seed)
    if split == "eval":
        return int(seed) + _EVAL_SEED_OFFSET
    raise ContractViolation(f"unknown background split {split!r}")


class Background:
    """Deterministic background frame source for one (mode, split, seed)."""

    def __init__(self, mode, split, seed, height, width):
        if mode not in ("none", "noise", "scroll"):
            raise ContractViolation(f"unknown background mode {mode!r}")
        self.mode = mode
        self.height = height
        self.width = width
        self.base_seed = _split_seed(seed, split)
        if mode == "scroll":
            rng = np.random.default_rng(self.base_seed)
            sheet_w = width * 8
            sheet = rng.uniform(0.0, 1.0, size=(height, sheet_w))
            # a few box blurs turn white noise into a smooth drifting texture
            for _ in range(3):
                sheet = (
                    sheet
                    + np.roll(sheet, 1, axis=0)
                    + np.roll(sheet, -1, axis=0)
                    + np.roll(sheet, 1, axis=1)
                    + np.roll(sheet, -1, axis=1)
                ) / 5.0
            sheet -= sheet.min()
            sheet /= max(sheet.max(), 1e-9)
            sheet *= 0.5
            # diagonal bands, then agent- and goal-shaped decoys at the real
            # glyph intensities: a natural-video stand-in must contain content
            # the foreground cannot be told apart from by brightness or shape
            rows = np.arange(height)[:, None]
            cols = np.arange(sheet_w)[None, :]
            period = max(height // 3, 3)
            sheet[((rows + cols) % (4 * period)) < period] += 0.25
            np.clip(sheet, 0.0, 1.0, out=sheet)
            for _ in range(8):
                _draw_square(sheet, int(rng.integers(2, max(height - 2, 3))),
                             int(rng.integers(2, max(sheet_w - 2, 3))), half=2, value=1.0)
                _draw_cross(sheet, int(rng.integers(3, max(height - 3, 4))),
                            int(rng.integers(3, max(sheet_w - 3, 4))), arm=3, value=0.8)
            self.sheet = sheet.astype(np.float32)
        else:
            self.sheet = None

    def frame(self, tick):
        """Background frame for physics tick ``tick`` (H, W), values in [0, 1]."""
        if self.mode == "none":
            return np.zeros((self.height, self.width), dtype=np.float32)
        if self.mode == "noise":
            rng = np.random.default_rng((self.base_seed, int(tick)))
            return rng.uniform(0.0, _BG_MAX, size=(self.height, self.width)).astype(np.float32)
        offset = int(tick) % self.sheet.shape[1]
        idx = (offset + np.arange(self.width)) % self.sheet.shape[1]
        return self.sheet[:, idx].copy()


def _draw_square(frame, row, col, half, value):
    H, W = frame.shape
    r0, r1 = max(row - half, 0), min(row + half + 1, H)
    c0, c1 = max(col - half, 0), min(col + half + 1, W)
    frame[r0:r1, c0:c1] = value


def _draw_cross(frame, row, col, arm, value):
    H, W = frame.shape
    frame[max(row - arm, 0) : min(row + arm + 1, H), col] = value
    frame[row, max(col - arm, 0) : min(col + arm + 1, W)] = value


class PointMassEnv:
    """Point mass on [-1, 1]^2 with damped kinematics and pixel observations.

    Each decision step applies the action for ``action_repeat`` physics
    ticks and returns the summed tick rewards.  Episodes end after
    ``episode_len`` decision steps (a timeout, not a terminal state).
    """

    # Calibrated so returns stay on the learning curve for tens of
    # thousands of frames: full thrust reaches a steady 0.12 units/tick,
    # coasting from that speed travels ~0.5 units, and the reward peak is
    # narrow enough that parking accuracy shows up in the episode return.
    GOAL = np.array([0.6, 0.6])
    DAMPING = 0.8
    ACCEL = 0.08
    DT = 0.3
    SIGMA_R_SQ = 0.12

    def __init__(
        self,
        frame_size=48,
        frame_stack=2,
        action_repeat=4,
        episode_len=250,
        background_mode="none",
        background_split="train",
        background_seed=0,
        color="gray",
    ):
        if color not in ("gray", "rgb"):
            raise ContractViolation(f"unknown color mode {color!r}")
        self.frame_size = int(frame_size)
        self.frame_stack = int(frame_stack)
        self.action_repeat = int(action_repeat)
        self.episode_len = int(episode_len)
        self.channels = 1 if color == "gray" else 3
        self.color = color
        self.background = Background(
            background_mode, background_split, background_seed, self.frame_size, self.frame_size
        )
        self.action_dim = 2
        self.obs_shape = (self.frame_stack * self.channels, self.frame_size, self.frame_size)
        self._pos = None
        self._vel = None
        self._tick = 0
        self._decision = 0
        self._done = True
        self._frames = []

    # -- rendering ---------------------------------------------------------

    def _to_pixel(self, xy):
        frac = (np.clip(xy, -1.0, 1.0) + 1.0) / 2.0
        return np.round(frac * (self.frame_size - 1)).astype(int)

    def _render_frame(self):
        frame = self.background.frame(self._tick)
        gr, gc = self._to_pixel(self.GOAL)
        ar, ac = self._to_pixel(self._pos)
        if self.color == "gray":
            _draw_cross(frame, gr, gc, arm=3, value=0.8)
            _draw_square(frame, ar, ac, half=2, value=1.0)
            return frame[None]
        rgb = np.stack([frame, frame, frame])
        _draw_cross(rgb[1], gr, gc, arm=3, value=0.8)  # green goal
        for ch, val in enumerate((1.0, 0.2, 0.2)):  # red agent
            _draw_square(rgb[ch], ar, ac, half=2, value=val)
        return rgb

    def _observation(self):
        obs = np.concatenate(self._frames, axis=0)
        # snap to the 1/255 grid: observations are nominally uint8 pixels / 255,
        # and replay storage round-trips exactly on that grid
        return (np.round(obs * 255.0) / 255.0).astype(np.float32)

    # -- episode interface ---------------------------------------------------

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        self._pos = rng.uniform(-0.9, 0.9, size=2)
        self._vel = np.zeros(2)
        self._tick = 0
        self._decision = 0
        self._done = False
        first = self._render_frame()
        self._frames = [first.copy() for _ in range(self.frame_stack)]
        return self._observation()

    def _tick_physics(self, action):
        self._vel = self.DAMPING * self._vel + self.ACCEL * action
        self._pos = np.clip(self._pos + self.DT * self._vel, -1.0, 1.0)
        self._tick += 1
        gap = self._pos - self.GOAL
        return float(np.exp(-(gap @ gap) / self.SIGMA_R_SQ))

    def step(self, action):
        if self._done:
            raise ContractViolation("step() called on a finished episode")
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if action.shape != (2,):
            raise ContractViolation(f"action shape {action.shape} != (2,)")
        reward = 0.0
        for _ in range(self.action_repeat):
            reward += self._tick_physics(action)
        self._frames.pop(0)
        self._frames.append(self._render_frame())
        self._decision += 1
        self._done = self._decision >= self.episode_len
        return self._observation(), reward, self._done

    def state(self):
        return self._pos.copy(), self._vel.copy()


def render_tabular(
    state_index,
    n_states,
    size=48,
    frame_stack=1,
    background_mode="none",
    background_split="train",
    background_seed=0,
    tick=0,
):
    """Deterministic glyph image for a discrete state, optional distraction.

    The center region is tiled 4x4; tile k is bright iff bit k of
    (state_index + 1) is set, so distinct states differ by at least 0.7
    in some tile (L-inf).  Background, when enabled, fills the border
    region only and is redrawn per stacked frame.
    """
    if not (0 <= state_index < n_states):
        raise ContractViolation(f"state index {state_index} outside [0, {n_states})")
    if n_states >= 2**16:
        raise ContractViolation("glyph encoding supports fewer than 2^16 states")
    bg = Background(background_mode, background_split, background_seed, size, size)
    margin = size // 6
    inner = size - 2 * margin
    cell = inner // 4
    code = state_index + 1
    frames = []
    for f in range(frame_stack):
        frame = bg.frame(tick + f)
        frame[margin : margin + inner, margin : margin + inner] = 0.1
        for k in range(16):
            if code >> k & 1:
                r, c = divmod(k, 4)
                r0 = margin + r * cell
                c0 = margin + c * cell
                frame[r0 : r0 + cell, c0 : c0 + cell] = 0.9
        frames.append(frame[None])
    stacked = np.concatenate(frames, axis=0)
    return (np.round(stacked * 255.0) / 255.0).astype(np.float32)
