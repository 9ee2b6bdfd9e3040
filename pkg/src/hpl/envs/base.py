"""Common environment interface.

Every method that takes a state or input accepts arrays with arbitrary
leading batch dimensions, so the optimizers can roll out whole populations
with a single call.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np


class Env(ABC):
    family: str = ""
    nx: int
    nu: int
    dt: float = 1.0
    binary_inputs: bool = False
    # strategy-state dimensions expressed relative to the value at query time
    relative_dims: tuple = ()
    state_names: tuple = ()
    input_names: tuple = ()

    u_low: np.ndarray
    u_high: np.ndarray

    env_id: str = ""

    @abstractmethod
    def step(self, x, u):
        """One step of the discrete dynamics."""

    @abstractmethod
    def violation(self, x):
        """Non-negative constraint violation; zero iff ``x`` is in X(Theta)."""

    def constraints_ok(self, x):
        return self.violation(x) <= 0.0

    def input_ok(self, u):
        u = np.asarray(u, dtype=float)
        ok = np.all((u >= self.u_low - 1e-12) & (u <= self.u_high + 1e-12), axis=-1)
        if self.binary_inputs:
            ok &= np.all((u == 0.0) | (u == 1.0), axis=-1)
        return ok

    def clip_input(self, u):
        return np.clip(u, self.u_low, self.u_high)

    @abstractmethod
    def forecast(self, x, N: int) -> tuple[np.ndarray, bool]:
        """Descriptor samples theta_{k:k+N}; the flag marks padding past the end."""

    def theta(self, x) -> np.ndarray:
        return self.forecast(x, 0)[0]

    @abstractmethod
    def query_state(self, x):
        """Local-frame state used in the strategy query vector."""

    @abstractmethod
    def strategy_state(self, x):
        """Projection g(x, Theta) into strategy-state space (absolute)."""

    def strategy_input(self, u):
        """Projection r(u, Theta); the full input by default."""
        return np.asarray(u, dtype=float)

    @property
    def n_strategy_state(self) -> int:
        return len(self.strategy_names)

    @property
    def n_strategy_input(self) -> int:
        return self.nu

    strategy_names: tuple = ()

    @abstractmethod
    def done(self, x) -> bool:
        """True once ``x`` is in the task target set P."""

    @abstractmethod
    def initial_state(self) -> np.ndarray:
        ...

    def restrict(self, x) -> "Env":
        """The environment as known to a controller standing at ``x``."""
        return self

    def progress(self, x) -> float:
        """Scalar task progress used by demonstrators and summaries."""
        return float(self.strategy_state(x)[0])

    @abstractmethod
    def to_dict(self) -> dict:
        ...

    def rollout(self, x0, U):
        """States x_0..x_H for a batch of input sequences ``U`` (..., H, nu)."""
        U = np.asarray(U, dtype=float)
        H = U.shape[-2]
        x = np.broadcast_to(np.asarray(x0, dtype=float), U.shape[:-2] + (self.nx,))
        X = np.empty(U.shape[:-2] + (H + 1, self.nx))
        X[..., 0, :] = x
        for j in range(H):
            x = self.step(x, U[..., j, :])
            X[..., j + 1, :] = x
        return X
