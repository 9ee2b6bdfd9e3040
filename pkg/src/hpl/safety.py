"""Safe sets, safety control policies and sampling-based invariance checks.

A safe set is a box over a few scalar *features* of the state (for example
the offset from the centerline and the velocity error to the safety
behavior), intersected with the environment constraints. Each safety policy
defines its features together with the environment's own bounds on them,
which is what the risk blending in :mod:`hpl.targets` interpolates between.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from hpl import viability as vb
from hpl.envs import flappy as fl
from hpl.envs import track as tr
from hpl.envs import tube as tb
from hpl.errors import SafeSetError


@dataclass(frozen=True)
class SafeSet:
    family: str
    feature_names: tuple
    lo: np.ndarray
    hi: np.ndarray
    scale: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    def contains(self, policy: "SafetyPolicy", env, x):
        return policy.in_safe_set(self, env, np.asarray(x, dtype=float))

    def to_dict(self):
        return {
            "family": self.family,
            "features": list(self.feature_names),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["family"], tuple(doc["features"]), doc["lo"], doc["hi"], doc.get("scale", float("nan")))


class SafetyPolicy:
    """Feedback law u = pi_e(x, Theta) plus the feature map its safe set uses."""

    family = ""
    feature_names: tuple = ()
    # bounds of the largest family member (scale 1) and of the core (scale 0)
    outer_lo: np.ndarray
    outer_hi: np.ndarray
    core_lo: np.ndarray
    core_hi: np.ndarray

    def input(self, x, env):
        raise NotImplementedError

    def certificate(self, env, x):
        """Extra membership condition beyond the feature box (all true unless
        the family needs one)."""
        return np.ones(np.shape(x)[:-1], bool)

    def in_safe_set(self, ss: SafeSet, env, x):
        f = self.features(x, env)
        inside = np.all((f >= ss.lo) & (f <= ss.hi), axis=-1)
        return inside & env.constraints_ok(x) & self.certificate(env, x)

    def features(self, x, env):
        raise NotImplementedError

    def variants(self):
        """Faster copies of the policy, used as warm starts by the planner."""
        out = [self]
        for f in getattr(self, "speed_factors", ()):
            p = copy.copy(self)
            p.speed = self.speed * f
            out.append(p)
        return out

    def env_bounds(self, env):
        """Bounds the environment constraints alone place on the features."""
        raise NotImplementedError

    def member_from_unit(self, env, ss: SafeSet, unit):
        """Map unit-cube samples (n, d) to candidate states inside ``ss``."""
        raise NotImplementedError

    def safe_set(self, scale: float) -> SafeSet:
        lo = self.core_lo + scale * (self.outer_lo - self.core_lo)
        hi = self.core_hi + scale * (self.outer_hi - self.core_hi)
        return SafeSet(self.family, self.feature_names, lo, hi, float(scale))


# -- tube ------------------------------------------------------------------


class TubeSafety(SafetyPolicy):
    """Follow the centerline at constant speed by chasing a carrot point a
    fixed arc length ahead; the velocity command is reached with a
    saturated proportional law."""

    family = "tube"
    feature_names = ("offset", "velocity_error")
    speed_factors = (2.0, 3.0, 4.0)

    def __init__(self, speed=tb.SAFE_SPEED, lookahead=0.15, gain=10.0, predictive=True, smooth=0.1):
        self.smooth = smooth
        self.speed = speed
        self.lookahead = lookahead
        self.gain = gain
        self.predictive = predictive
        self.outer_lo = np.array([-0.15, 0.0])
        self.outer_hi = np.array([0.15, 0.2])
        self.core_lo = np.array([-0.1, 0.0])
        self.core_hi = np.array([0.1, 0.1])

    def desired_velocity(self, x, env):
        x = np.asarray(x, dtype=float)
        s = env.arclength(x[..., 0])
        cq, cy = env.point_at_s(s + self.lookahead)
        d = np.stack([cq - x[..., 0], cy - x[..., 2]], axis=-1)
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        return self.speed * d / np.maximum(n, 1e-9)

    def input(self, x, env):
        x = np.asarray(x, dtype=float)
        v = x[..., [1, 3]]
        if self.predictive:
            # aim at the field value where the state will be after one step
            ahead = x.copy()
            ahead[..., 0] += tb.DT * x[..., 1]
            ahead[..., 2] += tb.DT * x[..., 3]
            target = self.desired_velocity(ahead, env)
        else:
            target = self.desired_velocity(x, env)
        return env.clip_input(self.gain * (target - v))

    def smoothed_offset(self, x, env):
        """Height above the centerline averaged over a window of +-smooth in q;
        unlike the plain offset it anticipates the corner cutting of the
        carrot law."""
        x = np.asarray(x, dtype=float)
        if self.smooth <= 0:
            return env.offset(x)
        w = self.smooth * np.linspace(-1.0, 1.0, 9)
        c = env.centerline(x[..., 0, None] + w).mean(axis=-1)
        return x[..., 2] - c

    def features(self, x, env):
        x = np.asarray(x, dtype=float)
        err = np.linalg.norm(x[..., [1, 3]] - self.desired_velocity(x, env), axis=-1)
        return np.stack([self.smoothed_offset(x, env), err], axis=-1)

    def env_bounds(self, env):
        return np.array([-0.5 * env.width, 0.0]), np.array([0.5 * env.width, math.sqrt(2) * tb.V_MAX + self.speed])

    def member_from_unit(self, env, ss, unit):
        s = unit[:, 0] * env.s_end
        q, _ = env.point_at_s(s)
        h = ss.lo[0] + unit[:, 1] * (ss.hi[0] - ss.lo[0])
        pos = np.stack([q, np.zeros_like(q), np.zeros_like(q), np.zeros_like(q)], axis=-1)
        pos[:, 2] = h - self.smoothed_offset(pos, env)
        vd = self.desired_velocity(pos, env)
        r = ss.lo[1] + np.sqrt(unit[:, 2]) * (ss.hi[1] - ss.lo[1])
        ang = 2 * np.pi * unit[:, 3]
        pos[:, 1] = vd[:, 0] + r * np.cos(ang)
        pos[:, 3] = vd[:, 1] + r * np.sin(ang)
        return pos


# -- track -----------------------------------------------------------------


class TrackSafety(SafetyPolicy):
    """Track the centerline at constant speed. The steering angle is chosen
    so that the direction of travel turns towards ``-atan(k e_y)`` within
    one step; the speed loop is a saturated proportional law."""

    family = "track"
    feature_names = ("e_y", "course_error", "v")
    speed_factors = (1.2, 1.4, 1.6)

    def __init__(self, speed=tr.SAFE_SPEED, tau=0.2, speed_gain=2.0):
        self.speed = speed
        self.tau = tau
        self.speed_gain = speed_gain
        self.outer_lo = np.array([-0.3, -0.2, 2.0])
        self.outer_hi = np.array([0.3, 0.2, 8.0])
        self.core_lo = np.array([-0.15, -0.05, speed - 0.5])
        self.core_hi = np.array([0.15, 0.05, speed + 0.5])
        self._beta_max = math.atan(tr.L_R / (tr.L_F + tr.L_R) * math.tan(tr.DELTA_MAX))

    def desired_heading(self, x, env):
        """Heading error whose direction of travel, with the slip angle of
        steady cornering, closes the lateral offset in about ``tau`` seconds."""
        x = np.asarray(x, dtype=float)
        course = -np.arctan(x[..., 3] / (np.maximum(x[..., 0], 1.0) * self.tau))
        slip = np.arcsin(np.clip(env.curvature(x[..., 2]) * tr.L_R, -1.0, 1.0))
        return course - slip

    def input(self, x, env):
        x = np.asarray(x, dtype=float)
        v, epsi, s, ey = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        a = np.clip(self.speed_gain * (self.speed - v), -tr.A_MAX, tr.A_MAX)
        kappa = env.curvature(s)
        v_eff = np.maximum(v, 0.5)
        sdot = v_eff * np.cos(epsi) / (1.0 - kappa * ey)
        # aim at the desired heading of the predicted next state
        ahead = x.copy()
        ahead[..., 0] = v + tr.DT * a
        ahead[..., 2] = s + tr.DT * sdot
        ahead[..., 3] = ey + tr.DT * v * np.sin(epsi)
        psi_next = self.desired_heading(ahead, env)
        sin_beta = tr.L_R * ((psi_next - epsi) / tr.DT + kappa * sdot) / v_eff
        beta = np.arcsin(np.clip(sin_beta, -math.sin(self._beta_max), math.sin(self._beta_max)))
        delta = np.arctan((tr.L_F + tr.L_R) / tr.L_R * np.tan(beta))
        return np.stack([a, np.clip(delta, -tr.DELTA_MAX, tr.DELTA_MAX)], axis=-1)

    def features(self, x, env):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 3], x[..., 1] - self.desired_heading(x, env), x[..., 0]], axis=-1)

    def env_bounds(self, env):
        return (
            np.array([-tr.HALF_WIDTH, -tr.PSI_MAX - math.pi / 2, 0.0]),
            np.array([tr.HALF_WIDTH, tr.PSI_MAX + math.pi / 2, tr.V_MAX]),
        )

    def member_from_unit(self, env, ss, unit):
        ey = ss.lo[0] + unit[:, 1] * (ss.hi[0] - ss.lo[0])
        course = ss.lo[1] + unit[:, 2] * (ss.hi[1] - ss.lo[1])
        v = ss.lo[2] + unit[:, 3] * (ss.hi[2] - ss.lo[2])
        s = unit[:, 0] * env.length
        x = np.stack([v, np.zeros_like(v), s, ey], axis=-1)
        x[:, 1] = course + self.desired_heading(x, env)
        return x


# -- flappy ----------------------------------------------------------------


class FlappySafety(SafetyPolicy):
    """Track the interpolated centerline of the visible pipe gaps: flap when
    the bird would sink below the reference within two steps. Inputs are
    filtered through exact viability tables (:mod:`hpl.viability`), so from
    any viable state the bird keeps clearing pipes whatever their heights.

    The safe set is the viable set itself; the feature box is loose and the
    family scale has no effect because the viable set is already maximal.
    """

    family = "flappy"
    feature_names = ("offset", "vy")

    def __init__(self, approach=60.0, viability=None):
        self.approach = approach
        self.viability = viability if viability is not None else vb.FlappyViability()
        self.outer_lo = np.array([-fl.SCREEN_H, float(vb.VY_MIN)])
        self.outer_hi = np.array([fl.SCREEN_H, float(vb.VY_MAX)])
        self.core_lo = self.outer_lo.copy()
        self.core_hi = self.outer_hi.copy()

    def reference(self, px, env):
        """Gap centerline: hold the next gap's height inside and just before a
        pipe, interpolate linearly from the previous gap in between."""
        px = np.asarray(px, dtype=float)
        i = env.next_pipe(px)
        n = env.pipe_lefts.size
        if n == 0:
            return np.full(px.shape, fl.Y_MID)
        known = i < n
        ic = np.minimum(i, n - 1)
        g = np.where(known, env.gap_centers[ic], fl.Y_MID)
        start = np.where(known, env.left_eff[ic] - self.approach, env.right_eff[-1] + self.approach)
        prev_known = i >= 1
        ip = np.minimum(np.maximum(i - 1, 0), n - 1)
        g_prev = np.where(prev_known, env.gap_centers[ip], fl.Y_MID)
        x_prev = np.where(prev_known, env.right_eff[ip], 0.0)
        w = np.clip((px - x_prev) / np.maximum(start - x_prev, 1e-9), 0.0, 1.0)
        return np.where(px >= start, g, g_prev + w * (g - g_prev))

    def viable(self, env, x):
        return self.viability.contains(env, x)

    def input(self, x, env):
        # the next pipe is always on screen, and viability at the next column
        # only involves pipes within the safety view, so no restriction needed
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        nxt0 = env.step(flat, np.zeros((flat.shape[0], 1)))
        nxt1 = env.step(flat, np.ones((flat.shape[0], 1)))
        ok0 = self.viable(env, nxt0)
        ok1 = self.viable(env, nxt1)
        sinking = flat[:, 1] + 2 * flat[:, 2] - 1 < self.reference(flat[:, 0], env)
        flap = np.where(ok0 & ok1, sinking, np.where(ok1, True, np.where(ok0, False, sinking)))
        return flap.astype(float).reshape(x.shape[:-1] + (1,))

    def features(self, x, env):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1] - self.reference(x[..., 0], env), x[..., 2]], axis=-1)

    def certificate(self, env, x):
        return self.viable(env, x)

    def env_bounds(self, env):
        return np.array([-fl.SCREEN_H, -60.0]), np.array([fl.SCREEN_H, 60.0])

    def member_from_unit(self, env, ss, unit):
        g = vb.grid()
        last = env.pipe_lefts[min(20, env.pipe_lefts.size - 1)]
        px = np.floor(unit[:, 0] * last / vb.STEP_X) * vb.STEP_X
        out = np.zeros((unit.shape[0], 3))
        out[:, 0] = px
        for i, p in enumerate(px):
            cells = np.argwhere(self.viability.viable_cells(env, p))
            if cells.size == 0:
                out[i, 1:] = [fl.Y_MID, 0.0]
                continue
            yi, vi = cells[min(int(unit[i, 1] * len(cells)), len(cells) - 1)]
            out[i, 1:] = [g.y[yi], g.vy[vi]]
        return out


POLICIES = {"tube": TubeSafety, "track": TrackSafety, "flappy": FlappySafety}


def policy_for(family: str) -> SafetyPolicy:
    return POLICIES[family]()


def safe_contains(ss: SafeSet, policy: SafetyPolicy, env, x) -> bool:
    return bool(ss.contains(policy, env, np.asarray(x, dtype=float)))


def safety_input(policy: SafetyPolicy, x, env) -> np.ndarray:
    """Safety input for one state; always inside U."""
    u = np.asarray(policy.input(np.asarray(x, dtype=float), env), dtype=float)
    return env.clip_input(u)


# -- verification ------------------------------------------------------------


@dataclass
class InvarianceReport:
    env_id: str
    n_samples: int
    horizon: int
    seed: int
    violations: list = field(default_factory=list)
    coverage: float = 0.0

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "n_samples": self.n_samples,
            "horizon": self.horizon,
            "seed": self.seed,
            "violations": self.violations,
            "coverage": self.coverage,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _unit_samples(n, d, seed):
    return np.random.default_rng(seed).random((n, d))


def _rollout_check(ss, policy, env, X0, horizon):
    """Roll the policy from every row of X0; first violation per row or None."""
    n = X0.shape[0]
    first = [None] * n
    alive = np.ones(n, bool)
    x = X0.copy()
    for k in range(horizon + 1):
        if k > 0:
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            x[idx] = env.step(x[idx], policy.input(x[idx], env))
        idx = np.flatnonzero(alive)
        in_x = env.constraints_ok(x[idx])
        in_ss = ss.contains(policy, env, x[idx])
        for j in np.flatnonzero(~(in_x & in_ss)):
            i = idx[j]
            first[i] = {
                "sample": int(i),
                "step": k,
                "kind": "constraints" if not in_x[j] else "safe_set",
                "state": x[i].tolist(),
            }
            alive[i] = False
    return first


def verify_invariance(ss: SafeSet, policy: SafetyPolicy, envs, n_samples: int, horizon: int, seed: int = 0):
    """Roll the safety policy forward from sampled safe-set members.

    Samples are spread round-robin over ``envs``; any exit from the safe set
    or from X(Theta) within ``horizon`` steps is reported.
    """
    envs = list(envs) if isinstance(envs, (list, tuple)) else [envs]
    report = InvarianceReport(",".join(e.env_id for e in envs), n_samples, horizon, seed)
    if n_samples <= 0:
        return report
    d = 4
    unit = _unit_samples(n_samples, d, seed)
    tested = 0
    for e_idx, env in enumerate(envs):
        rows = np.arange(e_idx, n_samples, len(envs))
        if rows.size == 0:
            continue
        X0 = policy.member_from_unit(env, ss, unit[rows])
        members = ss.contains(policy, env, X0)
        X0, rows = X0[members], rows[members]
        tested += rows.size
        for v in _rollout_check(ss, policy, env, X0, horizon):
            if v is not None:
                v["sample"] = int(rows[v["sample"]])
                v["env_id"] = env.env_id
                report.violations.append(v)
    report.coverage = tested / n_samples
    return report


def estimate_safe_set(envs, policy: SafetyPolicy, n_samples: int, horizon: int, seed: int = 0, iterations: int = 8):
    """Largest member of the policy's nested safe-set family (bisection on the
    family scale) whose sampled members all stay invariant for ``horizon``
    steps. Samples use common random numbers across scales."""
    def ok(scale):
        rep = verify_invariance(policy.safe_set(scale), policy, envs, n_samples, horizon, seed)
        return not rep.violations and rep.coverage > 0

    if ok(1.0):
        return policy.safe_set(1.0)
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise SafeSetError(
            f"no invariant member of the {policy.family} safe-set family; try a different safety policy"
        )
    return policy.safe_set(lo)
