"""Shifting-horizon MPC over the target set list and the HPL control loop.

At every step the strategy proposes a target set ``T`` steps ahead, which is
pushed into the set list. The MPC then looks for the largest horizon whose
target set can be reached feasibly and applies the first planned input.
When no horizon works the safety policy takes over. Plans are only ever
accepted after an exact re-simulation, and the previous plan, shifted by one
step, is always among the candidates, so a plan that was feasible stays
feasible.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from hpl import optim, strategy as st, targets as tg
from hpl.errors import ContractError
from hpl.execution import Execution
from hpl.safety import safety_input

log = logging.getLogger(__name__)

MPC = "mpc"
SAFETY = "safety"


@dataclass
class PlanResult:
    status: str
    U: np.ndarray
    X: np.ndarray
    objective: float
    H: int
    slack: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def safety_sequence(policy, env, x, H):
    """Inputs of the safety policy run closed loop for ``H`` steps."""
    U = np.empty((H, env.nu))
    x = np.asarray(x, dtype=float)
    for j in range(H):
        U[j] = safety_input(policy, x, env)
        x = env.step(x, U[j])
    return U


def _evaluator(x_k, slots, H, env):
    """Batch evaluation of input sequences against the first ``H`` slots."""
    terminal = slots[H - 1]
    stage = [(j, slots[j]) for j in range(H - 1) if not slots[j].is_empty]

    def evaluate(U):
        X = env.rollout(x_k, U)
        viol = np.sum(env.violation(X[:, 1:]), axis=-1)
        viol = viol + np.sum(~env.input_ok(U), axis=-1)
        term = terminal.distance(X[:, H])
        cost = term.copy()
        for j, s in stage:
            cost += s.distance(X[:, j + 1])
        # the distance is zero exactly on members
        feasible = (viol <= 0.0) & (term <= 0.0)
        return feasible, cost, viol + term

    return evaluate


def check_plan(x_k, U, slots, env):
    """Re-simulate ``U`` step by step and check every constraint exactly."""
    H = len(U)
    X = np.empty((H + 1, env.nx))
    X[0] = x_k
    for j in range(H):
        X[j + 1] = env.step(X[j], U[j])
    states_ok = bool(np.all(env.constraints_ok(X[1:])))
    inputs_ok = bool(np.all(env.input_ok(U)))
    terminal_ok = bool(slots[H - 1].contains(X[H]))
    return X, {"states_ok": states_ok, "inputs_ok": inputs_ok, "terminal_ok": terminal_ok}


def _fit_length(U, H, tail):
    """Truncate ``U`` to ``H`` steps or pad it with rows of ``tail``."""
    U = np.asarray(U, dtype=float)
    if len(U) >= H:
        return U[:H]
    return np.concatenate([U, tail[len(U) : H]], axis=0)


def solve_mpc(x_k, slots, H, env, budget=optim.Budget(), seed=0, candidates=()):
    """Minimize the summed target distances over slots ``0..H-1`` with hard
    membership of ``x_H`` in slot ``H-1``.

    ``env`` is the environment as known at ``x_k``. ``candidates`` are extra
    input sequences that are always evaluated (padded or truncated to ``H``).
    """
    x_k = np.asarray(x_k, dtype=float)
    if not 1 <= H <= len(slots):
        raise ContractError(f"horizon {H} outside 1..{len(slots)}")
    if slots[H - 1].is_empty:
        raise ContractError(f"slot {H - 1} is empty")
    evaluate = _evaluator(x_k, slots, H, env)
    rng = np.random.default_rng(seed)
    cands = [c[:H] for c in candidates if len(c) >= H]
    if env.binary_inputs and 2**H <= optim.ENUMERATION_LIMIT:
        best = optim.enumerate_binary(evaluate, H)
    elif env.binary_inputs:
        best = optim.cem_bernoulli(evaluate, H, rng, budget, candidates=cands)
    else:
        mean = cands[0] if cands else None
        best = optim.cem_gaussian(evaluate, env.u_low, env.u_high, H, rng, budget, mean=mean, candidates=cands)
    X, checks = check_plan(x_k, best.U, slots, env)
    ok = best.feasible and all(checks.values())
    if best.feasible and not ok:
        log.warning("plan failed re-simulation: %s", checks)
    slack = dict(checks, violation=best.violation)
    return PlanResult("feasible" if ok else "infeasible", best.U, X, best.cost, H, slack)


def select_horizon(x_k, slots, env, budget=optim.Budget(), seed=0, solver=None, candidates=()):
    """Largest horizon whose slot is non-empty and feasibly reachable.

    Returns ``(H, plan)``, or ``(None, None)`` when no slot qualifies.
    """
    solver = solve_mpc if solver is None else solver
    for H in range(len(slots), 0, -1):
        if slots[H - 1].is_empty:
            continue
        plan = solver(x_k, slots, H, env, budget=budget, seed=seed + H, candidates=candidates)
        if plan.feasible:
            return H, plan
    return None, None


def enumerated_solver(x_k, slots, env):
    """Solver for binary inputs that rolls out all ``2^T`` sequences once.

    In lexicographic order the length-``H`` sequences are every
    ``2^(T-H)``-th row of the length-``T`` ones (the prefixes followed by
    zeros), and the cost of a prefix does not depend on later inputs, so each
    horizon is a strided view of one shared evaluation.
    """
    T = len(slots)
    U_all = optim.binary_sequences(T)
    X = env.rollout(np.asarray(x_k, dtype=float), U_all)
    step_viol = env.violation(X[:, 1:])
    dist = {}
    for j in range(T):
        if not slots[j].is_empty:
            # x_{j+1} only depends on the first j+1 inputs
            rep = 2 ** (T - j - 1)
            dist[j] = np.repeat(slots[j].distance(X[::rep, j + 1]), rep)

    def solve(x, sl, H, env_, budget=None, seed=0, candidates=()):
        if sl[H - 1].is_empty:
            raise ContractError(f"slot {H - 1} is empty")
        idx = np.arange(0, 2**T, 2 ** (T - H))
        viol = np.sum(step_viol[idx, :H], axis=-1)
        term = dist[H - 1][idx]
        cost = term.copy()
        for j in range(H - 1):
            if j in dist:
                cost += dist[j][idx]
        feasible = (viol <= 0.0) & (term <= 0.0)
        U = optim.binary_sequences(H)
        i = optim.rank(feasible, cost, viol + term)[0]
        Xp, checks = check_plan(x, U[i], sl, env_)
        ok = bool(feasible[i]) and all(checks.values())
        slack = dict(checks, violation=float(viol[i] + term[i]))
        return PlanResult("feasible" if ok else "infeasible", U[i].copy(), Xp, float(cost[i]), H, slack)

    return solve


@dataclass(frozen=True)
class HplConfig:
    N: int
    T: int
    eta: float = st.DEFAULT_ETA
    beta: float = 0.0
    d_thresh: float | tuple = 1.0
    budget: optim.Budget = optim.Budget()
    max_horizon: int | None = None

    def __post_init__(self):
        if self.T < 1 or self.N < 0:
            raise ContractError("need T >= 1 and N >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError("beta must lie in [0, 1]")
        if np.any(np.asarray(self.d_thresh) <= 0) or self.eta <= 0:
            raise ContractError("d_thresh and eta must be positive")


@dataclass
class ControllerState:
    setlist: tg.SetList
    mode: str
    k: int
    seed: int
    strategy: object
    policy: object
    safe_set: object
    config: HplConfig
    plan: np.ndarray | None = None

    @classmethod
    def start(cls, strategy, policy, safe_set, config, seed=0):
        return cls(tg.SetList.init(config.T), SAFETY, 0, seed, strategy, policy, safe_set, config)


def propose_target(cs: ControllerState, x_k, env):
    """Evaluate the strategy at ``x_k`` and lift it, or return an empty set."""
    c = cs.config
    if cs.strategy is None:
        return tg.TargetSet.empty(cs.k, cs.k + c.T), None
    q = env.query_state(x_k)
    theta, _ = env.forecast(x_k, c.N)
    sset = st.evaluate_strategy(cs.strategy, q, theta, c.eta)
    if not st.confidence_gate(sset.confidence, c.d_thresh):
        return tg.TargetSet.empty(cs.k, cs.k + c.T), sset
    t = tg.lift(sset, cs.safe_set, cs.policy, env, c.beta, x_k=x_k, created=cs.k, horizon=c.T)
    return t, sset


def hpl_step(cs: ControllerState, x_k, env):
    """One step of the HPL policy; returns ``(u_k, new state, log entry)``."""
    t0 = time.perf_counter()
    x_k = np.asarray(x_k, dtype=float)
    known = env.restrict(x_k)
    target, sset = propose_target(cs, x_k, known)
    slots = cs.setlist.push(target)
    c = cs.config
    H, plan = None, None
    if not slots.all_empty():
        view = slots
        if c.max_horizon is not None and c.max_horizon < len(slots):
            view = tg.SetList(slots.slots[: c.max_horizon])
        candidates, solver = [], None
        if known.binary_inputs and 2 ** len(view) <= optim.ENUMERATION_LIMIT:
            solver = enumerated_solver(x_k, view, known) if not view.all_empty() else None
        else:
            if cs.plan is not None and len(cs.plan) > 1:
                tail = safety_sequence(cs.policy, known, x_k, c.T)
                candidates.append(_fit_length(cs.plan[1:], c.T, tail))
            candidates += [safety_sequence(p, known, x_k, c.T) for p in cs.policy.variants()]
        if not view.all_empty():
            H, plan = select_horizon(
                x_k, view, known, c.budget, seed=cs.seed + 7919 * cs.k, solver=solver, candidates=candidates
            )
    if plan is None:
        mode = SAFETY
        u = safety_input(cs.policy, x_k, known)
        new_plan = None
    else:
        mode = MPC
        u = plan.U[0]
        new_plan = plan.U
    unsafe_switch = False
    if mode == SAFETY and cs.mode == MPC:
        unsafe_switch = not bool(cs.safe_set.contains(cs.policy, known, x_k))
        if unsafe_switch:
            log.warning("entered safety mode outside the safe set at k=%d", cs.k)
    entry = {
        "k": cs.k,
        "mode": mode,
        "H": H or 0,
        "C_k": None if sset is None else sset.confidence.tolist(),
        "box_lo": None if target.is_empty else target.lo.tolist(),
        "box_hi": None if target.is_empty else target.hi.tolist(),
        "u": np.asarray(u).tolist(),
        "objective": None if plan is None else plan.objective,
        "unsafe_switch": unsafe_switch,
        "wall_time": time.perf_counter() - t0,
    }
    new = replace(cs, setlist=slots, mode=mode, k=cs.k + 1, plan=new_plan)
    return np.asarray(u, dtype=float), new, entry


def log_line(entry) -> str:
    return json.dumps(entry)


def run_task(env, strategy, policy, safe_set, config: HplConfig, seed=0, step_cap=2000, log_sink=None):
    """Run the HPL loop until the task is done or ``step_cap`` steps pass."""
    x = env.initial_state()
    if not bool(safe_set.contains(policy, env.restrict(x), x)):
        raise ContractError("initial state is not in the safe set")
    cs = ControllerState.start(strategy, policy, safe_set, config, seed)
    states, inputs, modes = [x], [], []
    horizons, unsafe = [], 0
    while not env.done(x) and cs.k < step_cap:
        u, cs, entry = hpl_step(cs, x, env)
        x = env.step(x, u)
        states.append(x)
        inputs.append(u)
        modes.append(entry["mode"])
        horizons.append(entry["H"])
        unsafe += entry["unsafe_switch"]
        if log_sink is not None:
            log_sink(entry)
        if not bool(env.constraints_ok(x)):
            log.warning("constraint violated at k=%d", cs.k)
            break
    complete = bool(env.done(x))
    return Execution(
        env.env_id, np.array(states), np.array(inputs).reshape(-1, env.nu), env.dt, complete, modes,
        {"horizons": horizons, "unsafe_switches": unsafe},
    )


def run_safety(env, policy, step_cap=2000):
    """Execution of the safety policy alone."""
    x = env.initial_state()
    states, inputs = [x], []
    while not env.done(x) and len(inputs) < step_cap:
        u = safety_input(policy, x, env.restrict(x))
        x = env.step(x, u)
        states.append(x)
        inputs.append(u)
        if not bool(env.constraints_ok(x)):
            break
    return Execution(env.env_id, np.array(states), np.array(inputs).reshape(-1, env.nu), env.dt, bool(env.done(x)),
                     [SAFETY] * len(inputs))


def center_tracking_input(env, x, H=10):
    """Baseline for binary-input games: the enumerated sequence that keeps the
    bird closest to the centre of the next gap without hitting a known pipe.
    No terminal set is used, so nothing beyond ``H`` steps is considered."""
    known = env.restrict(x)
    U = optim.binary_sequences(H)
    X = known.rollout(x, U)
    viol = np.sum(known.violation(X[:, 1:]), axis=-1)
    center = known.gap_ahead(X[:, 1:, 0])
    cost = np.sum(np.abs(X[:, 1:, 1] - center), axis=-1)
    i = optim.rank(viol <= 0.0, cost, viol)[0]
    return U[i, 0]


def run_center_tracking(env, H=10, step_cap=100000):
    x = env.initial_state()
    states, inputs = [x], []
    while not env.done(x) and len(inputs) < step_cap:
        u = center_tracking_input(env, x, H)
        x = env.step(x, u)
        states.append(x)
        inputs.append(u)
        if not bool(env.constraints_ok(x)):
            break
    return Execution(env.env_id, np.array(states), np.array(inputs).reshape(-1, env.nu), env.dt, bool(env.done(x)))
