"""Tube navigation: a planar double integrator moving through a tube whose
centerline has piecewise-constant slope.

State ``[q, dq, y, dy]`` (horizontal position, its rate, height, its rate),
input ``[ddq, ddy]``. The tube has constant vertical width; the walls are
``|y - c(q)| <= width / 2`` where ``c`` is the centerline height.
"""

from __future__ import annotations

import json

import numpy as np

from hpl.envs.base import Env

DT = 0.1
WIDTH = 0.4
V_MAX = 2.0
A_MAX = 3.0
SAFE_SPEED = 0.5
FORECAST_SPACING = 0.2
SHARP_WIDTH = 0.34  # narrowest width at which the shipped safe set stays invariant on sharp tubes


class TubeEnv(Env):
    family = "tube"
    nx = 4
    nu = 2
    dt = DT
    relative_dims = (0,)
    state_names = ("q", "dq", "y", "dy")
    input_names = ("ddq", "ddy")
    strategy_names = ("ds", "h")

    def __init__(self, slopes, lengths, width=WIDTH, env_id="tube"):
        self.slopes = np.asarray(slopes, dtype=float)
        self.lengths = np.asarray(lengths, dtype=float)
        if self.slopes.shape != self.lengths.shape or self.slopes.size == 0:
            raise ValueError("slopes and lengths must be non-empty and equally long")
        if width <= 0 or np.any(self.lengths <= 0):
            raise ValueError("width and segment lengths must be positive")
        self.width = float(width)
        self.env_id = env_id
        self.q_breaks = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.c_breaks = np.concatenate([[0.0], np.cumsum(self.slopes * self.lengths)])
        self.stretch = np.sqrt(1.0 + self.slopes**2)
        self.s_breaks = np.concatenate([[0.0], np.cumsum(self.lengths * self.stretch)])
        self.q_end = float(self.q_breaks[-1])
        self.s_end = float(self.s_breaks[-1])
        self.u_low = np.full(2, -A_MAX)
        self.u_high = np.full(2, A_MAX)

    # geometry -------------------------------------------------------------
    def segment(self, q):
        i = np.searchsorted(self.q_breaks, q, side="right") - 1
        return np.clip(i, 0, self.slopes.size - 1)

    def centerline(self, q):
        i = self.segment(q)
        return self.c_breaks[i] + self.slopes[i] * (q - self.q_breaks[i])

    def arclength(self, q):
        i = self.segment(q)
        return self.s_breaks[i] + self.stretch[i] * (q - self.q_breaks[i])

    def segment_at_s(self, s):
        i = np.searchsorted(self.s_breaks, s, side="right") - 1
        return np.clip(i, 0, self.slopes.size - 1)

    def point_at_s(self, s):
        """Centerline point ``(q, c)`` at arc length ``s``."""
        i = self.segment_at_s(s)
        q = self.q_breaks[i] + (s - self.s_breaks[i]) / self.stretch[i]
        return q, self.c_breaks[i] + self.slopes[i] * (q - self.q_breaks[i])

    def slope_at_s(self, s):
        return self.slopes[self.segment_at_s(s)]

    def offset(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 2] - self.centerline(x[..., 0])

    # dynamics and constraints --------------------------------------------
    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        q, dq, y, dy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        a, b = u[..., 0], u[..., 1]
        return np.stack(
            [
                q + DT * dq + 0.5 * DT**2 * a,
                dq + DT * a,
                y + DT * dy + 0.5 * DT**2 * b,
                dy + DT * b,
            ],
            axis=-1,
        )

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        wall = np.abs(self.offset(x)) - 0.5 * self.width
        vel = np.maximum(np.abs(x[..., 1]), np.abs(x[..., 3])) - V_MAX
        return np.maximum(wall, 0.0) + np.maximum(vel, 0.0)

    def constraints_ok(self, x):
        x = np.asarray(x, dtype=float)
        return (
            (np.abs(self.offset(x)) <= 0.5 * self.width)
            & (np.abs(x[..., 1]) <= V_MAX)
            & (np.abs(x[..., 3]) <= V_MAX)
        )

    def done(self, x) -> bool:
        return bool(np.asarray(x)[0] >= self.q_end)

    def initial_state(self):
        m = self.slopes[0]
        t = np.array([1.0, m]) / np.sqrt(1 + m * m)
        return np.array([0.0, SAFE_SPEED * t[0], 0.0, SAFE_SPEED * t[1]])

    # strategy interface ---------------------------------------------------
    def forecast(self, x, N):
        s0 = float(self.arclength(np.asarray(x, dtype=float)[0]))
        s = s0 + FORECAST_SPACING * np.arange(N + 1)
        return self.slope_at_s(s).astype(float), bool(s[-1] > self.s_end)

    def query_state(self, x):
        x = np.asarray(x, dtype=float)
        m = self.slopes[self.segment(x[..., 0])]
        n = np.sqrt(1 + m * m)
        v_t = (x[..., 1] + m * x[..., 3]) / n
        v_n = (x[..., 3] - m * x[..., 1]) / n
        return np.stack([self.offset(x), v_t, v_n], axis=-1)

    def strategy_state(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self.arclength(x[..., 0]), self.offset(x)], axis=-1)

    def progress(self, x):
        return float(self.arclength(np.asarray(x)[0]))

    def to_dict(self):
        return {
            "family": self.family,
            "env_id": self.env_id,
            "width": self.width,
            "segments": [{"slope": float(m), "length": float(l)} for m, l in zip(self.slopes, self.lengths)],
        }

    @classmethod
    def from_dict(cls, doc):
        seg = doc["segments"]
        return cls(
            [s["slope"] for s in seg], [s["length"] for s in seg], doc.get("width", WIDTH), doc.get("env_id", "tube")
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def generate(n, seed, n_segments=(5, 8), slope_range=(-1.0, 1.0), length_range=(0.5, 1.2)):
    rng = np.random.default_rng(seed)
    envs = []
    for i in range(n):
        k = int(rng.integers(n_segments[0], n_segments[1] + 1))
        slopes = rng.uniform(*slope_range, size=k)
        lengths = rng.uniform(*length_range, size=k)
        envs.append(TubeEnv(slopes, lengths, env_id=f"tube-{seed}-{i}"))
    return envs


def sharp_curve_tubes(n, seed, slope_range=(0.8, 1.0), length_range=(0.6, 1.2), width=SHARP_WIDTH):
    """Narrow tubes with alternating steep slopes, so every corner turns by at
    least ~80 degrees and leaves little room to recover from a fast entry."""
    rng = np.random.default_rng(seed)
    envs = []
    for i in range(n):
        k = int(rng.integers(5, 8))
        sign = rng.choice([-1.0, 1.0])
        slopes = sign * np.array([(-1) ** j for j in range(k)]) * rng.uniform(*slope_range, size=k)
        slopes[0] = rng.uniform(-0.2, 0.2)
        lengths = rng.uniform(*length_range, size=k)
        envs.append(TubeEnv(slopes, lengths, width=width, env_id=f"sharp-{seed}-{i}"))
    return envs
