"""Sampling-based input-sequence optimizers.

Both optimizers take an ``evaluate`` callback mapping a batch of input
sequences ``(P, H, nu)`` to ``(feasible, cost, violation)`` arrays. Ranking
puts feasible candidates first (by cost) and infeasible ones after (by
violation); ties keep candidate order, so results are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ENUMERATION_LIMIT = 4096


@dataclass(frozen=True)
class Budget:
    population: int = 256
    elites: int = 32
    iterations: int = 20
    init_std: float = 0.5
    min_std: float = 1e-3


@lru_cache(maxsize=None)
def binary_sequences(H: int) -> np.ndarray:
    """All 2^H binary sequences, in lexicographic order, shape (2^H, H, 1)."""
    seqs = np.array(list(itertools.product((0.0, 1.0), repeat=H)), dtype=float).reshape(2**H, H)
    seqs.setflags(write=False)
    return seqs[..., None]


def rank(feasible, cost, violation) -> np.ndarray:
    key = np.where(feasible, cost, np.inf)
    # lexsort: last key is primary
    return np.lexsort((np.arange(len(key)), violation, key, ~feasible))


@dataclass
class SearchResult:
    U: np.ndarray
    feasible: bool
    cost: float
    violation: float


def _best(U, feasible, cost, violation) -> SearchResult:
    i = rank(feasible, cost, violation)[0]
    return SearchResult(U[i].copy(), bool(feasible[i]), float(cost[i]), float(violation[i]))


def enumerate_binary(evaluate, H: int) -> SearchResult:
    U = binary_sequences(H)
    f, c, v = evaluate(U)
    return _best(U, f, c, v)


def _merge(best, cand):
    if best is None:
        return cand
    if cand.feasible and (not best.feasible or cand.cost < best.cost):
        return cand
    if not cand.feasible and not best.feasible and cand.violation < best.violation:
        return cand
    return best


def cem_gaussian(evaluate, low, high, H, rng, budget=Budget(), mean=None, candidates=()):
    """Cross-entropy search over box-bounded continuous input sequences.

    ``candidates`` (each ``(H, nu)``) are evaluated in the first population and
    can therefore never be beaten by a worse sample.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    nu = low.size
    mu = np.zeros((H, nu)) + 0.5 * (low + high) if mean is None else np.array(mean, dtype=float)
    sigma = np.broadcast_to(budget.init_std * (high - low), (H, nu)).copy()
    best = None
    extra = np.array(candidates, dtype=float).reshape(-1, H, nu) if len(candidates) else np.empty((0, H, nu))
    for it in range(budget.iterations):
        n = budget.population - (len(extra) if it == 0 else 0)
        samples = mu + sigma * rng.standard_normal((max(n, 0), H, nu))
        U = np.clip(samples, low, high)
        if it == 0:
            U = np.concatenate([extra, U, np.clip(mu, low, high)[None]], axis=0)
        f, c, v = evaluate(U)
        order = rank(f, c, v)
        best = _merge(best, SearchResult(U[order[0]].copy(), bool(f[order[0]]), float(c[order[0]]), float(v[order[0]])))
        elite = U[order[: budget.elites]]
        mu = elite.mean(axis=0)
        sigma = np.maximum(elite.std(axis=0), budget.min_std * (high - low))
    return best


def cem_bernoulli(evaluate, H, rng, budget=Budget(), prob=None, candidates=()):
    """Cross-entropy search over binary sequences with independent Bernoulli
    parameters per step."""
    p = np.full((H, 1), 0.5) if prob is None else np.clip(np.array(prob, dtype=float), 0.05, 0.95)
    extra = np.array(candidates, dtype=float).reshape(-1, H, 1) if len(candidates) else np.empty((0, H, 1))
    best = None
    for it in range(budget.iterations):
        n = budget.population - (len(extra) if it == 0 else 0)
        U = (rng.random((max(n, 0), H, 1)) < p).astype(float)
        if it == 0:
            U = np.concatenate([extra, U], axis=0)
        f, c, v = evaluate(U)
        order = rank(f, c, v)
        best = _merge(best, SearchResult(U[order[0]].copy(), bool(f[order[0]]), float(c[order[0]]), float(v[order[0]])))
        p = np.clip(0.7 * U[order[: budget.elites]].mean(axis=0) + 0.3 * p, 0.02, 0.98)
    return best
