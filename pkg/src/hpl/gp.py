"""Gaussian-process regression with a squared-exponential ARD kernel.

Hyperparameters are fitted by maximizing the log marginal likelihood with
multi-start gradient ascent in log-parameter space. A fitted :class:`GpModel`
caches the Cholesky factor of the regularized Gram matrix so that a query
costs O(n) for the mean and O(n^2) for the variance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from hpl.errors import ContractError, FactorizationError, FitError, SerializationError

JITTER = 1e-8
NOISE_FLOOR = 1e-10
FORMAT_VERSION = 1

_LOG_MIN = math.log(1e-10)
_LOG_MAX = math.log(1e8)


@dataclass(frozen=True)
class Hyperparams:
    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if not self.signal_variance > 0:
            raise ContractError(f"signal_variance must be > 0, got {self.signal_variance}")
        if ls.ndim != 1 or np.any(~(ls > 0)):
            raise ContractError(f"length_scales must be a positive vector, got {ls}")
        if not self.noise_variance >= 0:
            raise ContractError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def to_log(self) -> np.ndarray:
        """Pack as (log sf2, log l_1..l_D, log sn2)."""
        sn2 = max(self.noise_variance, NOISE_FLOOR)
        return np.concatenate(
            [[math.log(self.signal_variance)], np.log(self.length_scales), [math.log(sn2)]]
        )

    @classmethod
    def from_log(cls, theta) -> "Hyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(
            signal_variance=float(np.exp(theta[0])),
            length_scales=np.exp(theta[1:-1]),
            noise_variance=float(np.exp(theta[-1])),
        )

    def __repr__(self):
        ls = np.array2string(self.length_scales, precision=4)
        return (
            f"Hyperparams(signal_variance={self.signal_variance:.6g}, "
            f"length_scales={ls}, noise_variance={self.noise_variance:.6g})"
        )


def _check_dim(z, hp: Hyperparams, name="z") -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != hp.dim:
        raise ContractError(f"{name} has dimension {z.shape[-1]}, kernel expects {hp.dim}")
    return z


def kernel_eval(z1, z2, hp: Hyperparams) -> float:
    """Squared-exponential kernel between two input vectors."""
    z1 = _check_dim(z1, hp, "z1")
    z2 = _check_dim(z2, hp, "z2")
    if z1.ndim != 1 or z2.ndim != 1:
        raise ContractError("kernel_eval takes two vectors; use kernel_matrix for batches")
    d = (z1 - z2) / hp.length_scales
    return float(hp.signal_variance * np.exp(-0.5 * np.dot(d, d)))


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_matrix(A, B, hp: Hyperparams) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(_check_dim(A, hp, "A")) / hp.length_scales
    B = np.atleast_2d(_check_dim(B, hp, "B")) / hp.length_scales
    return hp.signal_variance * np.exp(-0.5 * _sqdist(A, B))


def _as_data(Z, y):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if Z.shape[0] != y.size or y.size < 1:
        raise ContractError(f"need |Z| = |y| >= 1, got {Z.shape[0]} inputs and {y.size} outputs")
    return Z, y


def _factor(Z, hp: Hyperparams, jitter: float):
    K = kernel_matrix(Z, Z, hp)
    Kbar = K + (hp.noise_variance + jitter) * np.eye(Z.shape[0])
    try:
        L = cholesky(Kbar, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FactorizationError(f"Gram matrix not positive definite for {hp!r}") from exc
    return K, L


def log_marginal_likelihood(Z, y, hp: Hyperparams, jitter: float = JITTER) -> float:
    Z, y = _as_data(Z, y)
    _check_dim(Z, hp, "Z")
    _, L = _factor(Z, hp, jitter)
    alpha = cho_solve((L, True), y)
    n = y.size
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    )


def _lml_and_grad(Z, y, hp: Hyperparams, jitter: float):
    K, L = _factor(Z, hp, jitter)
    n = y.size
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv  # dL/dK = W / 2

    grad = np.empty(hp.dim + 2)
    WK = W * K
    grad[0] = 0.5 * np.sum(WK)
    for m in range(hp.dim):
        col = Z[:, m]
        dm = (col[:, None] - col[None, :]) ** 2 / hp.length_scales[m] ** 2
        grad[1 + m] = 0.5 * np.sum(WK * dm)
    grad[-1] = 0.5 * hp.noise_variance * np.trace(W)
    return float(lml), grad


def lml_gradient(Z, y, hp: Hyperparams, jitter: float = JITTER) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. (log sf2, log l_m, log sn2).

    The noise component is taken w.r.t. ``log(noise_variance)`` as stored, so
    it is exactly zero only when ``noise_variance`` is zero.
    """
    Z, y = _as_data(Z, y)
    _check_dim(Z, hp, "Z")
    return _lml_and_grad(Z, y, hp, jitter)[1]


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 5
    iterations: int = 100
    seed: int = 0
    init_low: float = 1e-2
    init_high: float = 1e2
    fit_noise: bool = True
    min_length_scale: float | None = None


@dataclass
class GpModel:
    """A fitted GP. Treat as immutable; :func:`predict` never mutates it."""

    Z: np.ndarray
    y: np.ndarray
    hyperparams: Hyperparams
    jitter: float = JITTER
    lml: float = float("nan")
    trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.Z, self.y = _as_data(self.Z, self.y)
        _check_dim(self.Z, self.hyperparams, "Z")
        _, self._L = _factor(self.Z, self.hyperparams, self.jitter)
        self._alpha = cho_solve((self._L, True), self.y)

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    def predict_batch(self, Q) -> tuple[np.ndarray, np.ndarray]:
        Q = np.atleast_2d(_check_dim(Q, self.hyperparams, "query"))
        Ks = kernel_matrix(Q, self.Z, self.hyperparams)
        mean = Ks @ self._alpha
        V = solve_triangular(self._L, Ks.T, lower=True, check_finite=False)
        var = self.hyperparams.signal_variance - np.einsum("ij,ij->j", V, V)
        return mean, np.sqrt(np.maximum(var, 0.0))


def predict(model: GpModel, z) -> tuple[float, float]:
    """Posterior mean and standard deviation at a single input."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ContractError("predict takes one input vector; use GpModel.predict_batch")
    mean, std = model.predict_batch(z[None, :])
    return float(mean[0]), float(std[0])


def _clip_log(theta, fit_noise, ls_floor=None):
    theta = np.clip(theta, _LOG_MIN, _LOG_MAX)
    theta[-1] = max(theta[-1], math.log(NOISE_FLOOR))
    if ls_floor is not None:
        theta[1:-1] = np.maximum(theta[1:-1], math.log(ls_floor))
    if not fit_noise:
        theta[-1] = math.log(NOISE_FLOOR)
    return theta


def _project(g, theta, fit_noise, ls_floor):
    """Drop gradient components that push against an active bound."""
    if not fit_noise:
        g[-1] = 0.0
    if ls_floor is not None:
        at = (theta[1:-1] <= math.log(ls_floor) + 1e-12) & (g[1:-1] < 0)
        g[1:-1][at] = 0.0
    return g


def _ascend(Z, y, theta, iterations, jitter, fit_noise, ls_floor=None):
    """Projected gradient ascent with backtracking; returns (theta, lml, trace)."""
    hp = Hyperparams.from_log(theta)
    lml, g = _lml_and_grad(Z, y, hp, jitter)
    g = _project(g, theta, fit_noise, ls_floor)
    trace = [lml]
    step = 0.1
    for _ in range(iterations):
        gnorm = np.linalg.norm(g)
        if not np.isfinite(gnorm) or gnorm < 1e-9:
            break
        accepted = False
        while step > 1e-10:
            cand = _clip_log(theta + step * g / gnorm, fit_noise, ls_floor)
            try:
                c_lml, c_g = _lml_and_grad(Z, y, Hyperparams.from_log(cand), jitter)
            except FactorizationError:
                step *= 0.5
                continue
            if c_lml > lml:
                theta, lml, g = cand, c_lml, _project(c_g, cand, fit_noise, ls_floor)
                trace.append(lml)
                accepted = True
                step = min(step * 2.0, 2.0)
                break
            step *= 0.5
        if not accepted:
            break
    return theta, lml, trace


def fit(Z, y, config: FitConfig = FitConfig(), jitter: float = JITTER) -> GpModel:
    """Fit hyperparameters by multi-start maximum marginal likelihood.

    Each restart draws every hyperparameter log-uniformly from
    ``[init_low, init_high]``; restart 0 instead starts from data-scaled
    defaults. The best restart wins, ties broken by lowest index.
    """
    Z, y = _as_data(Z, y)
    if y.size < 2:
        raise ContractError("fit needs at least 2 data points")
    D = Z.shape[1]
    rng = np.random.default_rng(config.seed)
    lo, hi = math.log(config.init_low), math.log(config.init_high)

    best = None
    errors = []
    for r in range(max(1, config.restarts)):
        if r == 0:
            spread = np.std(Z, axis=0)
            spread[spread <= 0] = 1.0
            theta0 = np.concatenate(
                [[math.log(max(np.var(y), 1e-2))], np.log(spread), [math.log(1e-2)]]
            )
        else:
            theta0 = rng.uniform(lo, hi, size=D + 2)
        theta0 = _clip_log(theta0, config.fit_noise, config.min_length_scale)
        try:
            theta, lml, trace = _ascend(Z, y, theta0, config.iterations, jitter, config.fit_noise,
                                        config.min_length_scale)
        except FactorizationError as exc:
            errors.append(str(exc))
            continue
        if best is None or lml > best[1]:
            best = (theta, lml, trace)
    if best is None:
        raise FitError("all restarts failed: " + "; ".join(errors))
    theta, lml, trace = best
    return GpModel(Z, y, Hyperparams.from_log(theta), jitter=jitter, lml=lml, trace=trace)


def to_dict(model: GpModel) -> dict:
    hp = model.hyperparams
    return {
        "format_version": FORMAT_VERSION,
        "hyperparams": {
            "signal_variance": hp.signal_variance,
            "length_scales": hp.length_scales.tolist(),
            "noise_variance": hp.noise_variance,
        },
        "Z": model.Z.tolist(),
        "y": model.y.tolist(),
        "jitter": model.jitter,
        "lml": model.lml,
    }


def from_dict(doc: dict) -> GpModel:
    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise SerializationError(f"unsupported format_version {doc['format_version']}")
        h = doc["hyperparams"]
        hp = Hyperparams(
            float(h["signal_variance"]), np.asarray(h["length_scales"], float), float(h["noise_variance"])
        )
        return GpModel(
            np.asarray(doc["Z"], float),
            np.asarray(doc["y"], float),
            hp,
            jitter=float(doc["jitter"]),
            lml=float(doc.get("lml", float("nan"))),
        )
    except SerializationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializationError(f"malformed GP document: {exc}") from exc


def serialize(model: GpModel) -> bytes:
    return json.dumps(to_dict(model)).encode("utf-8")


def deserialize(data: bytes) -> GpModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SerializationError(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SerializationError("GP document must be a JSON object")
    return from_dict(doc)
