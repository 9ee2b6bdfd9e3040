"""Curvilinear racing with a kinematic bicycle model.

State ``[v, e_psi, s, e_y]``: speed, heading error to the centerline, arc
length along the centerline, lateral offset. Input ``[a, delta]``:
longitudinal acceleration and steering angle. The track is a closed circuit
described only by its curvature profile kappa(s); a lap ends at s = L.
"""

from __future__ import annotations

import csv
import io
from importlib import resources

import numpy as np

from hpl.envs.base import Env

DT = 0.1
L_F = 0.125
L_R = 0.125
HALF_WIDTH = 0.4
V_MAX = 10.0
PSI_MAX = np.pi / 3
A_MAX = 1.0
DELTA_MAX = 0.5
SAFE_SPEED = 5.0
FORECAST_SPACING = 2.0
LAYOUT_STEP = 0.1


class TrackEnv(Env):
    family = "track"
    nx = 4
    nu = 2
    dt = DT
    relative_dims = (0,)
    state_names = ("v", "e_psi", "s", "e_y")
    input_names = ("a", "delta")
    strategy_names = ("ds", "e_y")

    def __init__(self, s_samples, kappa_samples, env_id="track"):
        self.s_samples = np.asarray(s_samples, dtype=float)
        self.kappa_samples = np.asarray(kappa_samples, dtype=float)
        if self.s_samples.ndim != 1 or self.s_samples.size < 2 or np.any(np.diff(self.s_samples) <= 0):
            raise ValueError("layout needs strictly increasing arc-length samples")
        self.length = float(self.s_samples[-1])
        self.env_id = env_id
        self.u_low = np.array([-A_MAX, -DELTA_MAX])
        self.u_high = np.array([A_MAX, DELTA_MAX])

    def curvature(self, s):
        return np.interp(np.mod(s, self.length), self.s_samples, self.kappa_samples)

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v, epsi, s, ey = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        a, delta = u[..., 0], u[..., 1]
        beta = np.arctan(L_R / (L_F + L_R) * np.tan(delta))
        kappa = self.curvature(s)
        sdot = v * np.cos(epsi + beta) / (1.0 - kappa * ey)
        return np.stack(
            [
                v + DT * a,
                epsi + DT * (v / L_R * np.sin(beta) - kappa * sdot),
                s + DT * sdot,
                ey + DT * v * np.sin(epsi + beta),
            ],
            axis=-1,
        )

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        v, epsi, ey = x[..., 0], x[..., 1], x[..., 3]
        return (
            np.maximum(-v, 0.0)
            + np.maximum(v - V_MAX, 0.0)
            + np.maximum(np.abs(epsi) - PSI_MAX, 0.0)
            + np.maximum(np.abs(ey) - HALF_WIDTH, 0.0)
        )

    def constraints_ok(self, x):
        x = np.asarray(x, dtype=float)
        return (
            (x[..., 0] >= 0.0)
            & (x[..., 0] <= V_MAX)
            & (np.abs(x[..., 1]) <= PSI_MAX)
            & (np.abs(x[..., 3]) <= HALF_WIDTH)
        )

    def done(self, x):
        return bool(np.asarray(x)[2] >= self.length)

    def initial_state(self):
        return np.array([SAFE_SPEED, 0.0, 0.0, 0.0])

    def forecast(self, x, N):
        s = float(np.asarray(x)[2]) + FORECAST_SPACING * np.arange(N + 1)
        return self.curvature(s), bool(s[-1] > self.length)

    def query_state(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0], x[..., 1], x[..., 3]], axis=-1)

    def strategy_state(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 2], x[..., 3]], axis=-1)

    def progress(self, x):
        return float(np.asarray(x)[2])

    def to_dict(self):
        return {"family": self.family, "env_id": self.env_id, "layout_csv": layout_to_csv(self)}

    @classmethod
    def from_dict(cls, doc):
        s, k = parse_layout(io.StringIO(doc["layout_csv"]))
        return cls(s, k, env_id=doc.get("env_id", "track"))


def layout_to_csv(env: TrackEnv) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["s", "kappa"])
    for s, k in zip(env.s_samples, env.kappa_samples):
        w.writerow([repr(float(s)), repr(float(k))])
    return buf.getvalue()


def parse_layout(fh):
    rows = list(csv.reader(fh))
    if not rows or rows[0] != ["s", "kappa"]:
        raise ValueError("track layout must start with header 's,kappa'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return data[:, 0], data[:, 1]


def random_layout(rng, n_pieces=(6, 9), ramp=1.0):
    """Curvature profile built from straights and constant-curvature arcs
    joined by linear curvature ramps."""
    knots_s, knots_k = [0.0], [0.0]
    s = 0.0
    k = int(rng.integers(n_pieces[0], n_pieces[1] + 1))
    for i in range(k):
        if i % 2 == 0:
            length, kappa = rng.uniform(3.0, 10.0), 0.0
        else:
            kappa = rng.choice([-1.0, 1.0]) * rng.uniform(0.25, 0.8)
            length = rng.uniform(np.pi / 6, 3 * np.pi / 4) / abs(kappa)
        knots_s += [s + ramp, s + ramp + length]
        knots_k += [kappa, kappa]
        s += ramp + length
    knots_s.append(s + ramp)
    knots_k.append(0.0)
    total = round((s + ramp) / LAYOUT_STEP) * LAYOUT_STEP
    grid = np.round(np.arange(0.0, total + LAYOUT_STEP / 2, LAYOUT_STEP), 10)
    return grid, np.interp(grid, knots_s, knots_k)


def stored_layout_names():
    root = resources.files("hpl.data").joinpath("tracks")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".csv"))


def load_layout(name: str) -> TrackEnv:
    text = resources.files("hpl.data").joinpath("tracks", f"{name}.csv").read_text()
    s, k = parse_layout(io.StringIO(text))
    return TrackEnv(s, k, env_id=name)


def generate(n, seed, perturb=0.0):
    """Load stored layouts in order; optionally scale curvature by 1 +/- perturb."""
    rng = np.random.default_rng(seed)
    names = stored_layout_names()
    envs = []
    for i in range(n):
        base = load_layout(names[i % len(names)])
        scale = 1.0 + perturb * rng.uniform(-1.0, 1.0) if perturb else 1.0
        envs.append(TrackEnv(base.s_samples, base.kappa_samples * scale, env_id=f"{base.env_id}"))
    return envs
