"""Flappy Bird with exact integer dynamics.

State ``[x, y, vy]`` with ``y`` measured upwards, input ``u in {0, 1}``::

    x+ = x + 4,  y+ = y + vy,  vy+ = vy - 1 + 16 u

The bird is treated as a point; pipe rectangles are inflated by half the
bird's width and the gaps shrunk by half its height. Only pipes whose left
edge lies within ``VIEW`` pixels ahead of the bird are visible.
"""

from __future__ import annotations

import json

import numpy as np

from hpl.envs.base import Env

SCREEN_H = 512.0
BIRD_W = 34.0
BIRD_H = 24.0
PIPE_W = 52.0
GAP = 100.0
SPACING = 170.0
VIEW = 230.0
FIRST_PIPE = 180.0
GAP_RANGE = (185.0, 326.0)
Y_MID = 256.0

Y_LOW = BIRD_H / 2
Y_HIGH = SCREEN_H - BIRD_H / 2
HALF_GAP = (GAP - BIRD_H) / 2


class FlappyEnv(Env):
    family = "flappy"
    nx = 3
    nu = 1
    dt = 1.0
    binary_inputs = True
    state_names = ("x", "y", "vy")
    input_names = ("flap",)
    strategy_names = ("d_gap1", "d_gap2")

    def __init__(self, pipe_lefts, gap_centers, n_target=200, env_id="flappy", seed=None):
        self.pipe_lefts = np.asarray(pipe_lefts, dtype=float)
        self.gap_centers = np.asarray(gap_centers, dtype=float)
        if self.pipe_lefts.shape != self.gap_centers.shape:
            raise ValueError("pipe_lefts and gap_centers must have equal length")
        self.left_eff = self.pipe_lefts - BIRD_W / 2
        self.right_eff = self.pipe_lefts + PIPE_W + BIRD_W / 2
        self.n_target = int(n_target)
        self.env_id = env_id
        self.seed = seed
        self.u_low = np.zeros(1)
        self.u_high = np.ones(1)

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)[..., 0]
        return np.stack([x[..., 0] + 4.0, x[..., 1] + x[..., 2], x[..., 2] - 1.0 + 16.0 * u], axis=-1)

    # pipes ---------------------------------------------------------------
    def next_pipe(self, px):
        """Index of the first pipe whose inflated right edge is at or ahead of ``px``."""
        return np.searchsorted(self.right_eff, px, side="left")

    def y_bounds(self, px):
        """Admissible vertical interval of the bird center at horizontal position ``px``."""
        px = np.asarray(px, dtype=float)
        i = self.next_pipe(px)
        valid = i < self.pipe_lefts.size
        ic = np.minimum(i, max(self.pipe_lefts.size - 1, 0))
        if self.pipe_lefts.size:
            inside = valid & (self.left_eff[ic] <= px)
            g = self.gap_centers[ic]
        else:
            inside = np.zeros(np.shape(px), bool)
            g = np.zeros(np.shape(px))
        lo = np.where(inside, np.maximum(g - HALF_GAP, Y_LOW), Y_LOW)
        hi = np.where(inside, np.minimum(g + HALF_GAP, Y_HIGH), Y_HIGH)
        return lo, hi

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.y_bounds(x[..., 0])
        y = x[..., 1]
        return np.maximum(lo - y, 0.0) + np.maximum(y - hi, 0.0)

    def constraints_ok(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.y_bounds(x[..., 0])
        return (x[..., 1] >= lo) & (x[..., 1] <= hi)

    def score(self, x) -> int:
        return int(np.sum(self.right_eff < np.asarray(x)[0]))

    def done(self, x):
        return self.score(x) >= self.n_target

    def initial_state(self):
        return np.array([0.0, Y_MID, 0.0])

    def restrict(self, x):
        px = float(np.asarray(x)[0])
        keep = self.pipe_lefts <= px + VIEW
        env = FlappyEnv(self.pipe_lefts[keep], self.gap_centers[keep], self.n_target, self.env_id, self.seed)
        env.restricted = True
        return env

    restricted = False

    def gap_ahead(self, px, rank=0):
        """Gap center of the ``rank``-th upcoming pipe, ``Y_MID`` if it is unknown."""
        i = self.next_pipe(np.asarray(px, dtype=float)) + rank
        known = i < self.pipe_lefts.size
        ic = np.minimum(i, max(self.pipe_lefts.size - 1, 0))
        g = self.gap_centers[ic] if self.pipe_lefts.size else np.zeros(np.shape(px))
        return np.where(known, g, Y_MID)

    # strategy interface ----------------------------------------------------
    def forecast(self, x, N):
        x = np.asarray(x, dtype=float)
        env = self if self.restricted else self.restrict(x)
        px = x[0] + 4.0 * np.arange(N + 1)
        i = env.next_pipe(px)
        return env.gap_ahead(px).astype(float), bool(np.any(i >= env.pipe_lefts.size))

    def query_state(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 1:3]

    def strategy_state(self, x):
        x = np.asarray(x, dtype=float)
        px, y = x[..., 0], x[..., 1]
        return np.stack([self.gap_ahead(px, 0) - y, self.gap_ahead(px, 1) - y], axis=-1)

    def progress(self, x):
        return float(self.score(x))

    def to_dict(self):
        return {
            "family": self.family,
            "env_id": self.env_id,
            "seed": self.seed,
            "n_target": self.n_target,
            "pipe_lefts": self.pipe_lefts.tolist(),
            "gap_centers": self.gap_centers.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["pipe_lefts"], doc["gap_centers"], doc["n_target"], doc["env_id"], doc.get("seed"))

    def to_json(self):
        return json.dumps(self.to_dict())


def generate(n, seed, n_target=200):
    rng = np.random.default_rng(seed)
    envs = []
    for i in range(n):
        count = n_target + 3
        lefts = FIRST_PIPE + SPACING * np.arange(count)
        gaps = np.round(rng.uniform(*GAP_RANGE, size=count))
        envs.append(FlappyEnv(lefts, gaps, n_target, env_id=f"flappy-{seed}-{i}", seed=seed))
    return envs
