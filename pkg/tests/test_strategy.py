import contextlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from hpl import gp, strategy as st
from hpl.envs import tube
from hpl.errors import ContractError, FitError, SerializationError
from hpl.planner import run_safety
from hpl.safety import policy_for
from stubs import LineEnv, line_execution

FAST = gp.FitConfig(restarts=1, iterations=40)


def test_rows_single_execution():
    ex, env = line_execution(np.ones(10))
    ds = st.build_dataset([(ex, env)], N=3, T=5)
    assert len(ds) == 6


def test_rows_two_executions():
    pairs = [line_execution(np.ones(10)), line_execution(np.ones(8))]
    ds = st.build_dataset(pairs, N=3, T=5)
    assert len(ds) == 10
    assert list(ds.task_index) == [0] * 6 + [1] * 4


@settings(max_examples=30, deadline=None)
@given(hst.lists(hst.integers(1, 12), min_size=1, max_size=5), hst.integers(1, 6))
def test_row_count_identity(durations, T):
    pairs = [line_execution(np.ones(d)) for d in durations]
    with pytest.warns(UserWarning) if any(d < T for d in durations) else contextlib.nullcontext():
        ds = st.build_dataset(pairs, N=2, T=T)
    assert len(ds) == sum(d - T + 1 for d in durations if d >= T)


def test_short_execution_skipped_with_warning():
    pairs = [line_execution(np.ones(3)), line_execution(np.ones(7))]
    with pytest.warns(UserWarning, match="fewer than T"):
        ds = st.build_dataset(pairs, N=1, T=5)
    assert len(ds) == 3


def test_infeasible_execution_rejected():
    ex, env = line_execution(np.ones(6))
    ex.states[3, 0] += 0.5  # breaks the dynamics
    with pytest.raises(ContractError, match="infeasible"):
        st.build_dataset([(ex, env)], N=1, T=2)


def test_outputs_relative_state_and_input_summary():
    u = np.array([1.0, 0.5, -0.5, 1.0, 1.0, 0.0, 1.0])
    ex, env = line_execution(u, LineEnv(goal=float(u.sum()), slope=0.3))
    ds = st.build_dataset([(ex, env)], N=2, T=3)
    # row k: [v_k, slope x 3] -> [p_{k+3} - p_k, min u[k:k+3], max u[k:k+3]]
    for k in range(len(ds)):
        assert ds.Z[k].tolist() == [ex.states[k, 1], 0.3, 0.3, 0.3]
        assert ds.Y[k, 0] == pytest.approx(u[k : k + 3].sum())
        assert ds.Y[k, 1] == u[k : k + 3].min()
        assert ds.Y[k, 2] == u[k : k + 3].max()


def test_tube_row_dimension():
    env = tube.generate(1, seed=4)[0]
    ex = run_safety(env, policy_for("tube"))
    ds = st.build_dataset([(ex, env)], N=10, T=5)
    # local state (offset, tangential and normal velocity) plus 11 slopes
    assert ds.Z.shape[1] == 3 + 11
    assert ds.Y.shape[1] == 2 + 2 * 2


def test_dataset_csv_round_trip(tmp_path):
    ds = st.build_dataset([line_execution(np.ones(9))], N=2, T=3)
    ds.to_csv(tmp_path / "d.csv")
    back = st.StrategyDataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.Z, ds.Z) and np.array_equal(back.Y, ds.Y)
    assert (back.N, back.T, back.n_state, back.n_input) == (2, 3, 1, 1)


def test_dataset_csv_malformed(tmp_path):
    (tmp_path / "d.csv").write_text("nonsense\n")
    with pytest.raises(SerializationError):
        st.StrategyDataset.from_csv(tmp_path / "d.csv")


def _varied_pairs(seed=0, n=4):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        u = rng.uniform(0.2, 1.0, size=12)
        pairs.append(line_execution(u))
    return pairs


def test_train_constant_output():
    ds = st.build_dataset([line_execution(np.ones(12))], N=1, T=2)
    s = st.train_strategy(ds, FAST)
    mu, sd = s.predict(ds.Z)
    assert np.allclose(mu[:, 0], 2.0)
    assert np.all(sd < 1e-3)


def test_train_empty_dataset():
    ds = st.StrategyDataset(np.empty((0, 3)), np.empty((0, 3)), 1, 2, 1, 1)
    with pytest.raises(ContractError):
        st.train_strategy(ds)


def test_fit_error_names_dimension(monkeypatch):
    ds = st.build_dataset(_varied_pairs(), N=1, T=2)
    calls = []
    real_fit = gp.fit

    def failing(Z, y, config):
        calls.append(1)
        if len(calls) == 2:
            raise FitError("all restarts failed")
        return real_fit(Z, y, FAST)

    monkeypatch.setattr(gp, "fit", failing)
    with pytest.raises(FitError, match="dimension 1"):
        st.train_strategy(ds)


def test_train_deterministic():
    ds = st.build_dataset(_varied_pairs(), N=1, T=2)
    a = st.train_strategy(ds, FAST)
    b = st.train_strategy(ds, FAST)
    assert np.array_equal(a.predict(ds.Z)[0], b.predict(ds.Z)[0])


def test_subsampling_caps_rows():
    ds = st.build_dataset(_varied_pairs(n=6), N=1, T=2)
    s = st.train_strategy(ds, FAST, max_rows=20)
    assert all(m.Z.shape[0] == 20 for m in s.models)


class FixedModel:
    """Stands in for a GP with a fixed posterior."""

    input_dim = 2

    def __init__(self, mean, std):
        self.mean, self.std = mean, std

    def predict_batch(self, Q):
        n = len(Q)
        return np.full(n, self.mean), np.full(n, self.std)


def _fixed_strategy(means, stds, n_state=1):
    models = [FixedModel(m, s) for m, s in zip(means, stds)]
    return st.Strategy(models, np.zeros(2), np.ones(2), np.zeros(len(models)), np.ones(len(models)), 1, 2,
                       n_state, (len(models) - n_state) // 2)


def test_evaluate_interval():
    s = _fixed_strategy([2.0, 0.0, 1.0], [0.5, 0.1, 0.1])
    S = st.evaluate_strategy(s, [0.0], [0.0], eta=2.0)
    assert S.state_lo[0] == 1.0 and S.state_hi[0] == 3.0
    assert S.confidence.tolist() == [0.5, 0.1, 0.1]
    assert S.input_lo[0] == pytest.approx(-0.2) and S.input_hi[0] == pytest.approx(1.2)


def test_evaluate_eta_zero_is_point():
    s = _fixed_strategy([2.0, 0.0, 1.0], [0.5, 0.1, 0.1])
    S = st.evaluate_strategy(s, [0.0], [0.0], eta=0.0)
    assert np.array_equal(S.lo, S.hi) and np.array_equal(S.lo, S.mean)


def test_evaluate_dimension_mismatch():
    s = _fixed_strategy([2.0, 0.0, 1.0], [0.5, 0.1, 0.1])
    with pytest.raises(ContractError):
        st.evaluate_strategy(s, [0.0, 1.0], [0.0], eta=1.0)


def _map_pairs():
    # inputs follow the logistic map, so the future is a function of v_k
    u = [0.2]
    for _ in range(30):
        u.append(3.7 * u[-1] * (1 - u[-1]))
    return [line_execution(np.array(u))]


def test_evaluate_at_training_row_centres_on_record():
    ds = st.build_dataset(_map_pairs(), N=1, T=2)
    s = st.train_strategy(ds, gp.FitConfig(restarts=1, iterations=40, fit_noise=False))
    for k in (0, 5, 17):
        S = st.evaluate_strategy(s, ds.Z[k, :1], ds.Z[k, 1:], eta=1.0)
        assert S.mean[0] == pytest.approx(ds.Y[k, 0], abs=1e-3)
        assert S.lo[0] <= ds.Y[k, 0] + 1e-3 and ds.Y[k, 0] - 1e-3 <= S.hi[0]


@settings(max_examples=50, deadline=None)
@given(hst.floats(0, 5), hst.floats(0, 5))
def test_interval_monotone_in_eta(e1, e2):
    s = _fixed_strategy([2.0, 0.0, 1.0], [0.5, 0.1, 0.3])
    a = st.evaluate_strategy(s, [0.0], [0.0], eta=min(e1, e2))
    b = st.evaluate_strategy(s, [0.0], [0.0], eta=max(e1, e2))
    assert np.all(b.lo <= a.lo) and np.all(b.hi >= a.hi)


def test_gate_examples():
    assert st.confidence_gate([0.1, 0.1], 0.5)
    assert not st.confidence_gate([0.1, 0.9], 0.5)
    assert st.confidence_gate([0.1, 0.9], [0.5, 1.0])
    with pytest.raises(ContractError):
        st.confidence_gate([0.1], 0.0)


def test_gate_rejects_far_queries():
    ds = st.build_dataset(_varied_pairs(), N=1, T=2)
    s = st.train_strategy(ds, FAST)
    S = st.evaluate_strategy(s, [1e3], [0.0, 0.0], eta=1.0)
    sf = s.y_scale[0] * np.sqrt(s.models[0].hyperparams.signal_variance)
    assert S.std[0] == pytest.approx(sf, rel=1e-6)
    assert not st.confidence_gate(S.confidence, 0.9 * sf)


@settings(max_examples=100, deadline=None)
@given(hst.lists(hst.floats(0, 2), min_size=1, max_size=6), hst.floats(0.01, 3), hst.floats(0.01, 3))
def test_gate_monotone_in_threshold(C, d1, d2):
    lo, hi = min(d1, d2), max(d1, d2)
    if st.confidence_gate(C, lo):
        assert st.confidence_gate(C, hi)


def test_strategy_save_load(tmp_path):
    ds = st.build_dataset(_varied_pairs(), N=1, T=2)
    s = st.train_strategy(ds, FAST)
    s.save(tmp_path / "s")
    back = st.Strategy.load(tmp_path / "s")
    assert np.array_equal(back.predict(ds.Z)[0], s.predict(ds.Z)[0])
    assert back.eta == s.eta and back.names == s.names


def test_strategy_load_missing(tmp_path):
    with pytest.raises(SerializationError):
        st.Strategy.load(tmp_path)


def test_eta_must_be_positive():
    with pytest.raises(ContractError):
        st.Strategy([FixedModel(0, 1)], [0, 0], [1, 1], [0], [1], 1, 1, 1, 0, eta=0.0)
