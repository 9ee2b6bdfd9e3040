import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from hpl import targets as tg
from hpl.envs import tube
from hpl.errors import ContractError
from hpl.safety import TubeSafety


class Box:
    def __init__(self, lo, hi):
        self.state_lo = np.asarray(lo, dtype=float)
        self.state_hi = np.asarray(hi, dtype=float)


@pytest.fixture(scope="module")
def setting():
    env = tube.TubeEnv([0.0, 0.5, -0.3], [1.0, 1.0, 1.0])
    pol = TubeSafety()
    return env, pol, pol.safe_set(1.0)


def test_blend_endpoints():
    lo, hi = tg.blend_bounds([-1, 0], [1, 2], [-3, -1], [3, 5], 0.0)
    assert lo.tolist() == [-1, 0] and hi.tolist() == [1, 2]
    lo, hi = tg.blend_bounds([-1, 0], [1, 2], [-3, -1], [3, 5], 1.0)
    assert lo.tolist() == [-3, -1] and hi.tolist() == [3, 5]
    lo, hi = tg.blend_bounds([-1], [1], [-3], [3], 0.5)
    assert lo.tolist() == [-2] and hi.tolist() == [2]


def test_blend_rejects_bad_beta():
    with pytest.raises(ContractError):
        tg.blend_bounds([0], [1], [0], [1], 1.5)


@settings(max_examples=100, deadline=None)
@given(hst.floats(0, 1), hst.floats(0, 1))
def test_blend_nested_in_beta(b1, b2):
    lo1, hi1 = tg.blend_bounds([-1, 0], [1, 2], [-3, -1], [3, 5], min(b1, b2))
    lo2, hi2 = tg.blend_bounds([-1, 0], [1, 2], [-3, -1], [3, 5], max(b1, b2))
    assert np.all(lo2 <= lo1 + 1e-12) and np.all(hi2 >= hi1 - 1e-12)


def _on_centerline(env, pol, s):
    q, y = env.point_at_s(np.asarray(s, dtype=float))
    x = np.stack([q, np.zeros_like(q), y, np.zeros_like(q)], axis=-1)
    v = pol.desired_velocity(x, env)
    x[..., 1], x[..., 3] = v[..., 0], v[..., 1]
    x[..., 2] -= pol.smoothed_offset(x, env) - (x[..., 2] - y)
    return x


def test_lift_anchor_and_membership(setting):
    env, pol, ss = setting
    x_k = _on_centerline(env, pol, 0.5)
    t = tg.lift(Box([0.2, -0.05], [0.4, 0.05]), ss, pol, env, 0.0, x_k=x_k, created=3, horizon=5)
    assert t.due == 8 and not t.is_empty
    assert t.anchor[0] == pytest.approx(env.strategy_state(x_k)[0])
    inside = _on_centerline(env, pol, 0.8)
    outside = _on_centerline(env, pol, 1.2)
    assert bool(t.contains(inside)) and not bool(t.contains(outside))


def test_distance_zero_exactly_on_members(setting):
    env, pol, ss = setting
    x_k = _on_centerline(env, pol, 0.5)
    t = tg.lift(Box([0.2, -0.05], [0.4, 0.05]), ss, pol, env, 0.0, x_k=x_k)
    rng = np.random.default_rng(0)
    X = _on_centerline(env, pol, rng.uniform(0.3, 1.3, 200))
    X[:, 2] += rng.normal(0, 0.05, 200)
    X[:, [1, 3]] += rng.normal(0, 0.1, (200, 2))
    d = t.distance(X)
    assert np.all(d >= 0)
    assert np.array_equal(d == 0, t.contains(X))
    assert np.any(d == 0) and np.any(d > 0)


def test_distance_grows_with_box_gap(setting):
    env, pol, ss = setting
    x_k = _on_centerline(env, pol, 0.0)
    t = tg.lift(Box([1.0, -0.05], [1.2, 0.05]), ss, pol, env, 0.0, x_k=x_k)
    d = t.distance(_on_centerline(env, pol, [0.2, 0.5, 0.8]))
    assert d[0] > d[1] > d[2] > 0


def test_beta_one_admits_more(setting):
    env, pol, ss = setting
    x_k = _on_centerline(env, pol, 0.5)
    box = Box([0.0, -0.2], [1.0, 0.2])
    t0 = tg.lift(box, ss, pol, env, 0.0, x_k=x_k)
    t1 = tg.lift(box, ss, pol, env, 1.0, x_k=x_k)
    x = _on_centerline(env, pol, 0.9)
    x[1] += 0.5  # fast: outside the safe set but inside the tube
    assert env.constraints_ok(x) and not t0.contains(x) and t1.contains(x)


def test_lift_needs_anchor_state(setting):
    env, pol, ss = setting
    with pytest.raises(ContractError):
        tg.lift(Box([0, 0], [1, 1]), ss, pol, env, 0.0)


def test_empty_set_operations():
    t = tg.TargetSet.empty()
    with pytest.raises(ContractError):
        t.contains(np.zeros(4))
    assert t.to_dict()["empty"]


def test_setlist_shift():
    sl = tg.SetList.init(3)
    assert len(sl) == 3 and sl.all_empty()
    a = tg.TargetSet(False, created=1, lo=np.zeros(1), hi=np.ones(1), anchor=np.zeros(1),
                     feature_lo=np.zeros(1), feature_hi=np.ones(1))
    sl2 = sl.push(a)
    assert sl2.nonempty() == [2] and sl.all_empty()
    sl3 = sl2.push(tg.TargetSet.empty()).push(tg.TargetSet.empty())
    assert sl3.nonempty() == [0]
    assert sl3.push(tg.TargetSet.empty()).all_empty()
    doc = json.loads(sl3.to_json())
    assert len(doc) == 3 and doc[0]["created"] == 1


@settings(max_examples=100, deadline=None)
@given(hst.lists(hst.booleans(), min_size=1, max_size=12), hst.integers(1, 6))
def test_setlist_length_invariant(pushes, T):
    sl = tg.SetList.init(T)
    for i, full in enumerate(pushes):
        t = tg.TargetSet(False, created=i) if full else tg.TargetSet.empty(created=i)
        sl = sl.push(t)
        assert len(sl) == T
    # slot j holds the set pushed T-1-j steps ago
    for j in range(T):
        i = len(pushes) - T + j
        if i >= 0:
            assert sl[j].created == i and sl[j].is_empty != pushes[i]


def test_setlist_needs_positive_length():
    with pytest.raises(ContractError):
        tg.SetList.init(0)
