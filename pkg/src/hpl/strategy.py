"""Strategy learning: GP models from stored executions to strategy sets.

A training row pairs the query vector ``z_k = [q(x_k), theta_k .. theta_{k+N}]``
with the strategy state reached ``T`` steps later and the per-dimension
min/max of the strategy input over the ``T`` steps in between. Strategy
dimensions listed in ``env.relative_dims`` are stored as increments from
``g(x_k)``, so a strategy learned on one task transfers to positions that
never occurred in training.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hpl import gp
from hpl.errors import ContractError, FitError, SerializationError

log = logging.getLogger(__name__)

DEFAULT_ETA = 2.0
MAX_ROWS = 400
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ProjectionPair:
    """Strategy projections of an environment family.

    The state projection measures relative dimensions from the current
    state, which is why it takes the anchor state ``x_k`` as well.
    """

    n_state: int
    n_input: int
    relative_dims: tuple = ()

    @classmethod
    def for_env(cls, env):
        return cls(env.n_strategy_state, env.n_strategy_input, tuple(env.relative_dims))

    def state(self, env, x, x_k):
        g = np.asarray(env.strategy_state(np.asarray(x, dtype=float)), dtype=float)
        if self.relative_dims:
            g = g.copy()
            ref = np.asarray(env.strategy_state(np.asarray(x_k, dtype=float)), dtype=float)
            g[..., list(self.relative_dims)] -= ref[..., list(self.relative_dims)]
        return g

    def input(self, env, u):
        return np.asarray(env.strategy_input(np.asarray(u, dtype=float)), dtype=float).reshape(
            np.shape(u)[:-1] + (self.n_input,)
        )

    @property
    def n_outputs(self) -> int:
        return self.n_state + 2 * self.n_input

    def output_names(self, env=None):
        names = list(getattr(env, "strategy_names", ())) or [f"x{i}" for i in range(self.n_state)]
        return names + [f"u{i}_{b}" for i in range(self.n_input) for b in ("min", "max")]


def query_vector(env, x, N):
    """``[q(x), theta_0 .. theta_N]`` with the forecast seen from ``x``."""
    x = np.asarray(x, dtype=float)
    known = env.restrict(x)
    theta, _ = known.forecast(x, N)
    return np.concatenate([np.ravel(env.query_state(x)), np.ravel(theta)])


@dataclass
class StrategyDataset:
    Z: np.ndarray
    Y: np.ndarray
    N: int
    T: int
    n_state: int
    n_input: int
    task_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Z.ndim != 2 or self.Y.ndim != 2:
            raise ContractError("Z and Y must be 2-d arrays")
        if len(self.Z) != len(self.Y):
            raise ContractError("Z and Y need the same number of rows")
        if len(self.task_index) != len(self.Z):
            self.task_index = np.zeros(len(self.Z), int)
        if self.Y.shape[1] and self.Y.shape[1] != self.n_state + 2 * self.n_input:
            raise ContractError("output width does not match the strategy dimensions")
        if not self.names:
            self.names = [f"y{i}" for i in range(self.Y.shape[1])]

    def __len__(self):
        return len(self.Z)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# N={self.N}", f"T={self.T}", f"n_state={self.n_state}", f"n_input={self.n_input}"])
            w.writerow(["task"] + [f"z{i}" for i in range(self.Z.shape[1])] + list(self.names))
            for t, z, y in zip(self.task_index, self.Z, self.Y):
                w.writerow([int(t)] + [repr(float(v)) for v in z] + [repr(float(v)) for v in y])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        try:
            meta = {k: int(v) for k, v in (item.lstrip("# ").split("=", 1) for item in rows[0])}
            header = rows[1]
            nz = sum(h.startswith("z") and h[1:].isdigit() for h in header)
            data = np.array([[float(v) for v in r] for r in rows[2:]]).reshape(-1, len(header))
            return cls(
                data[:, 1 : 1 + nz], data[:, 1 + nz :], meta["N"], meta["T"], meta["n_state"], meta["n_input"],
                task_index=data[:, 0].astype(int), names=header[1 + nz :],
            )
        except (IndexError, KeyError, ValueError, ContractError) as exc:
            raise SerializationError(f"malformed dataset CSV {path}: {exc}") from exc


def build_dataset(executions, N: int, T: int, projections=None, check=True) -> StrategyDataset:
    """Training rows from ``(execution, env)`` pairs.

    Every execution contributes ``D - T + 1`` rows. Executions with ``D < T``
    are skipped with a warning; infeasible ones raise :class:`ContractError`.
    """
    if T < 1 or N < 0:
        raise ContractError("need T >= 1 and N >= 0")
    Z, Y, idx = [], [], []
    proj = projections
    names = []
    for i, (ex, env) in enumerate(executions):
        if proj is None:
            proj = ProjectionPair.for_env(env)
        if not names:
            names = proj.output_names(env)
        if ex.duration < T:
            warnings.warn(f"execution {i} has {ex.duration} steps, fewer than T={T}; skipped", stacklevel=2)
            continue
        if check and not ex.is_feasible(env):
            raise ContractError(f"execution {i} is infeasible: {ex.check(env)}")
        r = proj.input(env, ex.inputs)
        for k in range(ex.duration - T + 1):
            x_k = ex.states[k]
            known = env.restrict(x_k)
            Z.append(query_vector(env, x_k, N))
            g = proj.state(known, ex.states[k + T], x_k)
            w = r[k : k + T]
            summary = np.stack([w.min(axis=0), w.max(axis=0)], axis=-1).ravel()
            Y.append(np.concatenate([g, summary]))
            idx.append(i)
    if proj is None:
        raise ContractError("no executions given")
    if not Z:
        return StrategyDataset(np.empty((0, 0)), np.empty((0, proj.n_outputs)), N, T, proj.n_state, proj.n_input, names=names)
    return StrategyDataset(np.array(Z), np.array(Y), N, T, proj.n_state, proj.n_input, np.array(idx), names)


@dataclass
class StrategySet:
    """Boxes ``mu +- eta * sigma`` over strategy states and input summaries."""

    mean: np.ndarray
    std: np.ndarray
    eta: float
    n_state: int

    @property
    def lo(self):
        return self.mean - self.eta * self.std

    @property
    def hi(self):
        return self.mean + self.eta * self.std

    @property
    def confidence(self):
        return self.std

    @property
    def state_lo(self):
        return self.lo[: self.n_state]

    @property
    def state_hi(self):
        return self.hi[: self.n_state]

    @property
    def input_lo(self):
        """Lower bound on every strategy input (the interval's min-output low end)."""
        return self.lo[self.n_state :][0::2]

    @property
    def input_hi(self):
        return self.hi[self.n_state :][1::2]


class Strategy:
    """One GP per output dimension, all sharing a normalized query vector."""

    def __init__(self, models, z_mean, z_scale, y_mean, y_scale, N, T, n_state, n_input, eta=DEFAULT_ETA, names=()):
        if eta <= 0:
            raise ContractError("eta must be positive")
        dims = {m.input_dim for m in models}
        if len(dims) > 1:
            raise ContractError("all strategy GPs must share the input dimension")
        self.models = list(models)
        self.z_mean = np.asarray(z_mean, dtype=float)
        self.z_scale = np.asarray(z_scale, dtype=float)
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.y_scale = np.asarray(y_scale, dtype=float)
        self.N, self.T = int(N), int(T)
        self.n_state, self.n_input = int(n_state), int(n_input)
        self.eta = float(eta)
        self.names = list(names) or [f"y{i}" for i in range(len(self.models))]

    @property
    def input_dim(self):
        return self.z_mean.size

    def predict(self, Q):
        """Means and standard deviations in output units, shape (n, n_out)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[1] != self.input_dim:
            raise ContractError(f"query has dimension {Q.shape[1]}, strategy expects {self.input_dim}")
        Qn = (Q - self.z_mean) / self.z_scale
        mu = np.empty((len(Q), len(self.models)))
        sd = np.empty_like(mu)
        for j, m in enumerate(self.models):
            mu[:, j], sd[:, j] = m.predict_batch(Qn)
        return self.y_mean + self.y_scale * mu, self.y_scale * sd

    # persistence ----------------------------------------------------------
    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for j, m in enumerate(self.models):
            name = f"gp_{j}.json"
            (d / name).write_text(json.dumps(gp.to_dict(m)))
            files.append(name)
        manifest = {
            "format_version": FORMAT_VERSION,
            "N": self.N, "T": self.T, "n_state": self.n_state, "n_input": self.n_input,
            "eta": self.eta, "names": self.names, "models": files,
            "z_mean": self.z_mean.tolist(), "z_scale": self.z_scale.tolist(),
            "y_mean": self.y_mean.tolist(), "y_scale": self.y_scale.tolist(),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            doc = json.loads((d / "manifest.json").read_text())
            if doc.get("format_version") != FORMAT_VERSION:
                raise SerializationError(f"unsupported strategy format {doc.get('format_version')}")
            models = [gp.from_dict(json.loads((d / f).read_text())) for f in doc["models"]]
            return cls(models, doc["z_mean"], doc["z_scale"], doc["y_mean"], doc["y_scale"], doc["N"], doc["T"],
                       doc["n_state"], doc["n_input"], doc["eta"], doc["names"])
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, SerializationError):
                raise
            raise SerializationError(f"cannot load strategy from {d}: {exc}") from exc


def _scale(A):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    scale[scale < 1e-9] = 1.0
    return mean, scale


def train_strategy(ds: StrategyDataset, fit_config=gp.FitConfig(), eta=DEFAULT_ETA, max_rows=MAX_ROWS, seed=0):
    """Fit one GP per output on standardized data.

    Datasets larger than ``max_rows`` are subsampled uniformly without
    replacement; the GP cost is cubic in the row count.
    """
    if len(ds) == 0:
        raise ContractError("cannot train a strategy on an empty dataset")
    Z, Y = ds.Z, ds.Y
    if len(Z) > max_rows:
        keep = np.sort(np.random.default_rng(seed).choice(len(Z), max_rows, replace=False))
        Z, Y = Z[keep], Y[keep]
    z_mean, z_scale = _scale(Z)
    y_mean, y_scale = _scale(Y)
    Zn = (Z - z_mean) / z_scale
    Yn = (Y - y_mean) / y_scale
    models = []
    for j in range(Y.shape[1]):
        try:
            models.append(gp.fit(Zn, Yn[:, j], fit_config))
        except FitError as exc:
            raise FitError(f"strategy dimension {j} ({ds.names[j]}): {exc}") from exc
        log.debug("fitted %s: lml=%.3f", ds.names[j], models[-1].lml)
    return Strategy(models, z_mean, z_scale, y_mean, y_scale, ds.N, ds.T, ds.n_state, ds.n_input, eta, ds.names)


def evaluate_strategy(s: Strategy, query_state, forecast, eta=None) -> StrategySet:
    """Strategy set at one query; ``forecast`` must hold N+1 samples."""
    q = np.ravel(np.asarray(query_state, dtype=float))
    f = np.ravel(np.asarray(forecast, dtype=float))
    eta = s.eta if eta is None else float(eta)
    if eta < 0:
        raise ContractError("eta must be non-negative")
    z = np.concatenate([q, f])
    if z.size != s.input_dim:
        raise ContractError(f"query has dimension {z.size}, strategy expects {s.input_dim}")
    mu, sd = s.predict(z[None, :])
    return StrategySet(mu[0], sd[0], eta, s.n_state)


def evaluate_at(s: Strategy, env, x, eta=None) -> StrategySet:
    """Strategy set for state ``x`` with the forecast known at ``x``."""
    q = np.ravel(env.query_state(np.asarray(x, dtype=float)))
    theta, _ = env.restrict(x).forecast(x, s.N)
    return evaluate_strategy(s, q, theta, eta)


def confidence_gate(C, d_thresh) -> bool:
    """Accept unless some standard deviation exceeds ``d_thresh``.

    ``d_thresh`` is a scalar or one threshold per output dimension.
    """
    d = np.asarray(d_thresh, dtype=float)
    if not np.all(d > 0):
        raise ContractError("d_thresh must be positive")
    return bool(np.all(np.asarray(C, dtype=float) <= d))
