import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from hpl import optim, planner as pl, targets as tg, viability as vb
from hpl.envs import flappy, tube
from hpl.errors import ContractError
from hpl.safety import FlappySafety, TubeSafety
from oracles import flappy_rollout, mpc_by_enumeration
from stubs import Box, LineEnv, LinePolicy, LineSafeSet

BUDGET = optim.Budget(population=64, elites=8, iterations=6)


def line_target(env, lo, hi, x_k, created=0):
    return tg.lift(Box(lo, hi), LineSafeSet(), LinePolicy(), env, 1.0, x_k=x_k, created=created)


def line_slots(env, x_k, boxes, T):
    sl = tg.SetList.init(T)
    for b in boxes:
        sl = sl.push(tg.TargetSet.empty() if b is None else line_target(env, b[0], b[1], x_k))
    return sl


def reachable_grid(H, grid=(-1.0, -0.5, 0.0, 0.5, 1.0)):
    """Positions reachable in H steps from rest with inputs on a coarse grid."""
    return {round(sum(s), 9) for s in itertools.product(grid, repeat=H)}


def test_solve_reachable_target():
    env, x0 = LineEnv(), np.zeros(2)
    reach = reachable_grid(3)
    assert any(2.5 <= p <= 3.0 for p in reach)
    sl = line_slots(env, x0, [None, None, (2.5, 3.0)], 3)
    plan = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=0)
    assert plan.feasible
    assert 2.5 <= plan.X[-1, 0] <= 3.0
    assert bool(sl[2].contains(plan.X[-1]))


def test_solve_unreachable_target():
    env, x0 = LineEnv(), np.zeros(2)
    assert not any(3.5 <= p <= 4.0 for p in reachable_grid(3))
    sl = line_slots(env, x0, [None, None, (3.5, 4.0)], 3)
    plan = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=0)
    assert plan.status == "infeasible"


def test_solve_respects_state_constraints():
    env, x0 = LineEnv(bound=1.5), np.zeros(2)
    sl = line_slots(env, x0, [None, None, (1.0, 2.0)], 3)
    plan = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=0)
    assert plan.feasible
    assert np.all(env.constraints_ok(plan.X)) and plan.X[-1, 0] <= 1.5


def test_feasible_plans_resimulate():
    env, x0 = LineEnv(), np.zeros(2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.uniform(-3, 3)
        sl = line_slots(env, x0, [None, None, (a, a + 0.5)], 3)
        plan = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=1)
        if plan.feasible:
            x = x0
            for u in plan.U:
                assert env.input_ok(u)
                x = env.step(x, u)
            assert np.max(np.abs(x - plan.X[-1])) <= 1e-9
            assert bool(sl[2].contains(x))


def test_solve_deterministic_per_seed():
    env, x0 = LineEnv(), np.zeros(2)
    sl = line_slots(env, x0, [(0.5, 1.0), None, (2.0, 2.5)], 3)
    a = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=4)
    b = pl.solve_mpc(x0, sl, 3, env, BUDGET, seed=4)
    assert np.array_equal(a.U, b.U) and a.objective == b.objective


def test_solve_preconditions():
    env, x0 = LineEnv(), np.zeros(2)
    sl = line_slots(env, x0, [None, (0, 1), None], 3)
    with pytest.raises(ContractError):
        pl.solve_mpc(x0, sl, 3, env)
    with pytest.raises(ContractError):
        pl.solve_mpc(x0, sl, 4, env)


def test_candidate_is_never_beaten_by_worse():
    env, x0 = LineEnv(), np.zeros(2)
    sl = line_slots(env, x0, [None, None, (2.9, 3.0)], 3)
    tiny = optim.Budget(population=4, elites=2, iterations=1)
    plan = pl.solve_mpc(x0, sl, 3, env, tiny, seed=0, candidates=[np.ones((3, 1))])
    assert plan.feasible


# -- horizon rule ------------------------------------------------------------


class TableSolver:
    def __init__(self, feasible):
        self.feasible = feasible
        self.calls = []

    def __call__(self, x, slots, H, env, budget=None, seed=0, candidates=()):
        self.calls.append(H)
        status = "feasible" if self.feasible[H - 1] else "infeasible"
        return pl.PlanResult(status, np.zeros((H, 1)), np.zeros((H + 1, 2)), 0.0, H)


def brute_horizon(nonempty, feasible):
    best = None
    for s in range(1, len(nonempty) + 1):
        if nonempty[s - 1] and feasible[s - 1]:
            best = s
    return best


def slots_from_mask(mask):
    full = tg.TargetSet(False, lo=np.zeros(1), hi=np.ones(1), anchor=np.zeros(1))
    return tg.SetList(full if m else tg.TargetSet.empty() for m in mask)


def test_horizon_examples():
    mask = [False, True, False, False, True]
    H, _ = pl.select_horizon(None, slots_from_mask(mask), None, solver=TableSolver([True] * 5))
    assert H == 5
    H, _ = pl.select_horizon(None, slots_from_mask(mask), None, solver=TableSolver([True, True, True, True, False]))
    assert H == 2
    assert pl.select_horizon(None, slots_from_mask([False] * 5), None, solver=TableSolver([True] * 5)) == (None, None)


@settings(max_examples=300, deadline=None)
@given(hst.integers(1, 6).flatmap(lambda T: hst.tuples(hst.lists(hst.booleans(), min_size=T, max_size=T),
                                                      hst.lists(hst.booleans(), min_size=T, max_size=T))))
def test_horizon_matches_brute_force(case):
    mask, feas = case
    solver = TableSolver(feas)
    H, _ = pl.select_horizon(None, slots_from_mask(mask), None, solver=solver)
    assert H == brute_horizon(mask, feas)
    # searched in decreasing order, only over non-empty slots
    assert solver.calls == sorted(solver.calls, reverse=True)
    assert all(mask[h - 1] for h in solver.calls)


# -- flappy exactness --------------------------------------------------------------


def flappy_case(rng, env, pol, H):
    via = pol.viability
    px = float(4 * rng.integers(0, 300))
    cells = np.argwhere(via.viable_cells(env, px))
    g = vb.grid()
    yi, vi = cells[rng.integers(len(cells))]
    x0 = np.array([px, g.y[yi], g.vy[vi]], dtype=float)
    known = env.restrict(x0)
    seq = rng.integers(0, 2, H)
    X = flappy_rollout(x0, seq)
    sl = tg.SetList.init(H)
    for j in range(H):
        if rng.random() < 0.4 and j < H - 1:
            sl = sl.push(tg.TargetSet.empty())
            continue
        gj = known.strategy_state(X[j + 1])
        w = rng.uniform(1, 40, size=2)
        shift = rng.normal(0, 15, size=2)
        beta = float(rng.choice([0.0, 1.0]))
        sl = sl.push(tg.lift(Box(gj + shift - w, gj + shift + w), pol.safe_set(1.0), pol, known, beta, x_k=x0))
    return x0, sl, known


@pytest.mark.parametrize("H", [1, 3, 6, 8])
def test_flappy_solver_matches_enumeration(H):
    env = flappy.generate(1, seed=21, n_target=20)[0]
    pol = FlappySafety()
    rng = np.random.default_rng(H)
    for _ in range(8):
        x0, sl, known = flappy_case(rng, env, pol, H)
        feasible, cost = mpc_by_enumeration(x0, sl, H, known)
        for plan in (pl.solve_mpc(x0, sl, H, known), pl.enumerated_solver(x0, sl, known)(x0, sl, H, known)):
            assert plan.feasible == feasible
            if feasible:
                assert plan.objective == pytest.approx(cost, abs=1e-9)


def test_enumerated_solver_agrees_on_every_horizon():
    env = flappy.generate(1, seed=3, n_target=20)[0]
    pol = FlappySafety()
    rng = np.random.default_rng(9)
    for _ in range(3):
        x0, sl, known = flappy_case(rng, env, pol, 8)
        fast = pl.enumerated_solver(x0, sl, known)
        for H in range(1, 9):
            if sl[H - 1].is_empty:
                continue
            a, b = pl.solve_mpc(x0, sl, H, known), fast(x0, sl, H, known)
            assert a.status == b.status and np.array_equal(a.U, b.U)
            assert a.objective == pytest.approx(b.objective, abs=1e-9)


# -- control loop ---------------------------------------------------------------


def test_step_without_targets_is_safety_policy():
    env = tube.generate(1, seed=2)[0]
    pol = TubeSafety()
    cfg = pl.HplConfig(N=10, T=5, budget=BUDGET)
    ex = pl.run_task(env, None, pol, pol.safe_set(1.0), cfg)
    ref = pl.run_safety(env, pol)
    assert np.array_equal(ex.states, ref.states)
    assert set(ex.modes) == {pl.SAFETY}


def test_rejected_step_keeps_mpc_mode():
    env, x0 = LineEnv(goal=50), np.zeros(2)
    cfg = pl.HplConfig(N=1, T=3, budget=BUDGET)
    cs = pl.ControllerState.start(None, LinePolicy(), LineSafeSet(), cfg)
    # a feasible set due in two steps, then the new proposal is rejected
    cs.setlist = line_slots(env, x0, [None, None, (1.0, 2.0)], 3)
    u, cs2, entry = pl.hpl_step(cs, x0, env)
    assert entry["mode"] == pl.MPC and entry["H"] == 2
    assert env.input_ok(u)
    assert cs2.setlist[2].is_empty


def test_mode_returns_to_safety_once_list_drains():
    env, x0 = LineEnv(goal=50), np.zeros(2)
    cfg = pl.HplConfig(N=1, T=3, budget=BUDGET)
    cs = pl.ControllerState.start(None, LinePolicy(), LineSafeSet(), cfg)
    cs.setlist = line_slots(env, x0, [None, None, (1.0, 2.0)], 3)
    x, modes = x0, []
    for _ in range(4):
        u, cs, entry = pl.hpl_step(cs, x, env)
        x = env.step(x, u)
        modes.append(entry["mode"])
    assert modes == [pl.MPC, pl.MPC, pl.SAFETY, pl.SAFETY]


def test_step_cap_zero():
    env = tube.generate(1, seed=2)[0]
    pol = TubeSafety()
    ex = pl.run_task(env, None, pol, pol.safe_set(1.0), pl.HplConfig(N=10, T=5), step_cap=0)
    assert ex.duration == 0 and not ex.complete


def test_run_rejects_unsafe_start():
    env = tube.generate(1, seed=2)[0]
    pol = TubeSafety()
    env.initial_state = lambda: np.array([0.0, 2.0, 0.0, 0.0])
    with pytest.raises(ContractError):
        pl.run_task(env, None, pol, pol.safe_set(1.0), pl.HplConfig(N=10, T=5))


def test_config_validation():
    with pytest.raises(ContractError):
        pl.HplConfig(N=1, T=0)
    with pytest.raises(ContractError):
        pl.HplConfig(N=1, T=2, beta=2.0)
    with pytest.raises(ContractError):
        pl.HplConfig(N=1, T=2, d_thresh=(0.1, 0.0))


def test_center_tracking_baseline_is_deterministic():
    env = flappy.generate(1, seed=8, n_target=5)[0]
    a = pl.run_center_tracking(env)
    b = pl.run_center_tracking(env)
    assert np.array_equal(a.states, b.states)
