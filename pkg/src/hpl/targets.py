"""Target sets and the target set list.

A target set lifts a strategy-space box back to the full state: a state is
a member when its strategy state lies in the box and it satisfies the
risk-blended safe-set predicate. With risk level ``beta`` every scalar
feature bound is ``(1 - beta) * safe + beta * env``; at ``beta = 0`` members
lie in the safe set, at ``beta = 1`` only in X(Theta). A family-specific
certificate (Flappy viability) is kept for every ``beta < 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from hpl.errors import ContractError

HINGE_WEIGHT = 10.0


def blend_bounds(safe_lo, safe_hi, env_lo, env_hi, beta):
    """Per-bound convex combination of safe-set and environment bounds."""
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    lo = (1.0 - beta) * np.asarray(safe_lo, dtype=float) + beta * np.asarray(env_lo, dtype=float)
    hi = (1.0 - beta) * np.asarray(safe_hi, dtype=float) + beta * np.asarray(env_hi, dtype=float)
    return lo, hi


@dataclass(frozen=True)
class TargetSet:
    """Lifted target set, or the explicit empty variant (``is_empty``)."""

    is_empty: bool
    created: int = 0
    due: int = 0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    anchor: np.ndarray | None = None
    beta: float = 0.0
    feature_lo: np.ndarray | None = None
    feature_hi: np.ndarray | None = None
    env: object = field(default=None, repr=False, compare=False)
    policy: object = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, created=0, due=0):
        return cls(True, created, due)

    # membership ----------------------------------------------------------
    def strategy_point(self, x):
        """g(x, Theta), measured from the anchor on relative dimensions."""
        g = np.asarray(self.env.strategy_state(np.asarray(x, dtype=float)), dtype=float)
        return g - self.anchor

    def _require(self):
        if self.is_empty:
            raise ContractError("operation needs a non-empty target set")

    def _feature_excess(self, x):
        f = self.policy.features(x, self.env)
        return np.sum(np.maximum(self.feature_lo - f, 0.0) + np.maximum(f - self.feature_hi, 0.0), axis=-1)

    def _certified(self, x):
        if self.beta >= 1.0:
            return np.ones(np.shape(x)[:-1], bool)
        return self.policy.certificate(self.env, x)

    def contains(self, x):
        self._require()
        x = np.asarray(x, dtype=float)
        g = self.strategy_point(x)
        in_box = np.all((g >= self.lo) & (g <= self.hi), axis=-1)
        return in_box & (self._feature_excess(x) <= 0.0) & self.env.constraints_ok(x) & self._certified(x)

    def distance(self, x):
        """Clamp distance of g(x) to the box plus a weighted hinge on the
        blended predicate; zero exactly on members."""
        self._require()
        x = np.asarray(x, dtype=float)
        g = self.strategy_point(x)
        box = np.linalg.norm(g - np.clip(g, self.lo, self.hi), axis=-1)
        hinge = self._feature_excess(x) + self.env.violation(x) + (~self._certified(x)).astype(float)
        return box + HINGE_WEIGHT * hinge

    def to_dict(self):
        if self.is_empty:
            return {"empty": True, "created": self.created, "due": self.due}
        return {
            "empty": False,
            "created": self.created,
            "due": self.due,
            "beta": self.beta,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "anchor": self.anchor.tolist(),
            "feature_lo": self.feature_lo.tolist(),
            "feature_hi": self.feature_hi.tolist(),
        }


def lift(box, ss, policy, env, beta, x_k=None, created=0, horizon=0):
    """Lift a strategy set to a full-dimensional target set.

    ``box`` supplies ``state_lo``/``state_hi`` in strategy coordinates, with
    relative dimensions measured from g(x_k). ``env`` is the knowledge at
    creation time (Flappy: pipes on screen at x_k).
    """
    lo = np.asarray(box.state_lo, dtype=float)
    hi = np.asarray(box.state_hi, dtype=float)
    anchor = np.zeros_like(lo)
    rel = list(getattr(env, "relative_dims", ()))
    if rel:
        if x_k is None:
            raise ContractError("relative strategy dimensions need the current state x_k")
        anchor[rel] = np.asarray(env.strategy_state(np.asarray(x_k, dtype=float)), dtype=float)[rel]
    env_lo, env_hi = policy.env_bounds(env)
    f_lo, f_hi = blend_bounds(ss.lo, ss.hi, env_lo, env_hi, beta)
    return TargetSet(False, created, created + horizon, lo, hi, anchor, float(beta), f_lo, f_hi, env, policy)


def distance_to_target(x, t: TargetSet, env=None):
    return t.distance(x)


class SetList:
    """Shift register of exactly T target sets; slot j is due j+1 steps ahead."""

    def __init__(self, slots):
        self.slots = tuple(slots)

    @classmethod
    def init(cls, T: int):
        if T < 1:
            raise ContractError("set list length must be positive")
        return cls(TargetSet.empty() for _ in range(T))

    def __len__(self):
        return len(self.slots)

    def __getitem__(self, j):
        return self.slots[j]

    def push(self, t: TargetSet) -> "SetList":
        return SetList(self.slots[1:] + (t,))

    def nonempty(self):
        return [j for j, s in enumerate(self.slots) if not s.is_empty]

    def all_empty(self) -> bool:
        return not self.nonempty()

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.slots])
