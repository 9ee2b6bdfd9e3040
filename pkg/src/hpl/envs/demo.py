"""Offline demonstrator producing training executions.

A receding-horizon optimizer with full knowledge of the environment
maximizes progress over a long horizon. The last predicted state must lie in
the safety policy's safe set, so the previous plan, shifted and completed
with one safety input, always remains a feasible candidate.
"""

from __future__ import annotations

import logging

import numpy as np

from hpl import optim
from hpl.execution import Execution
from hpl.safety import policy_for, safety_input

log = logging.getLogger(__name__)

DEMO_HORIZON = 30
DEMO_BUDGETS = {
    "tube": optim.Budget(population=128, elites=16, iterations=8, init_std=0.3),
    # steering noise has to be small or almost every sample leaves the lane
    "track": optim.Budget(population=128, elites=16, iterations=8, init_std=np.array([0.3, 0.01])),
    "flappy": optim.Budget(population=128, elites=16, iterations=8),
}


class DemoError(RuntimeError):
    pass


def _progress(env, X):
    if env.family == "flappy":
        return X[..., 0]
    return env.strategy_state(X)[..., 0]


def _cost(env, policy, X):
    if env.family == "flappy":
        # stay near the gap centerline
        return np.sum(np.abs(X[..., 1:, 1] - policy.reference(X[..., 1:, 0], env)), axis=-1)
    p = _progress(env, X)
    return -(p[..., -1] + 0.1 * np.sum(p[..., 1:], axis=-1))


def demonstrate(env, seed=0, horizon=DEMO_HORIZON, budget=None, policy=None, safe_set=None, step_cap=5000):
    """Near minimum-time execution of ``env``; raises :class:`DemoError` if
    the run fails."""
    policy = policy_for(env.family) if policy is None else policy
    ss = policy.safe_set(1.0) if safe_set is None else safe_set
    budget = DEMO_BUDGETS[env.family] if budget is None else budget
    rng = np.random.default_rng(seed)
    x = env.initial_state()
    if not bool(ss.contains(policy, env, x)):
        raise DemoError("initial state outside the safe set")
    states, inputs = [x], []
    plan = None

    def evaluate(U):
        X = env.rollout(x, U)
        viol = np.sum(env.violation(X[:, 1:]), axis=-1) + np.sum(~env.input_ok(U), axis=-1)
        term = ss.contains(policy, env, X[:, -1])
        feasible = (viol <= 0) & term
        return feasible, _cost(env, policy, X), viol + (~term)

    while not env.done(x) and len(inputs) < step_cap:
        if plan is None:
            U_safe = np.empty((horizon, env.nu))
            z = x
            for j in range(horizon):
                U_safe[j] = safety_input(policy, z, env)
                z = env.step(z, U_safe[j])
            warm = U_safe
        else:
            z = env.rollout(x, plan[1:])[-1]
            warm = np.concatenate([plan[1:], safety_input(policy, z, env)[None]], axis=0)
        if env.binary_inputs:
            best = optim.cem_bernoulli(evaluate, horizon, rng, budget, prob=0.5 + 0.4 * (warm - 0.5),
                                       candidates=[warm])
        else:
            best = optim.cem_gaussian(evaluate, env.u_low, env.u_high, horizon, rng, budget, mean=warm,
                                      candidates=[warm])
        if not best.feasible:
            raise DemoError(f"no feasible plan at step {len(inputs)} (violation {best.violation:.3g})")
        plan = best.U
        u = plan[0]
        x = env.step(x, u)
        states.append(x)
        inputs.append(u)
    ex = Execution(env.env_id, np.array(states), np.array(inputs).reshape(-1, env.nu), env.dt, bool(env.done(x)))
    if not ex.complete:
        raise DemoError("step cap reached")
    return ex


def demonstrate_many(envs, seed=0, **kwargs):
    """Demonstrations for every environment; failures are skipped and logged."""
    out = []
    for i, env in enumerate(envs):
        try:
            out.append((demonstrate(env, seed=seed + i, **kwargs), env))
        except DemoError as exc:
            log.warning("demonstration %d (%s) skipped: %s", i, env.env_id, exc)
    return out
