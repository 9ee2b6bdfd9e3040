"""Run configuration: JSON schema, per-family defaults and seed substreams.

All randomness of a run derives from ``seed``. Components draw from named
substreams (``env``, ``fit``, ``optimizer``, ...) so each one can be re-run in
isolation without shifting the others.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from hpl import gp, optim
from hpl.errors import ConfigError

FAMILY_DEFAULTS = {
    "tube": {
        "N": 10, "T": 5, "n_train": 20, "n_eval": 20,
        "d_thresh": [0.1, 0.06, 2.0, 2.0, 2.0, 2.0],
        "step_cap": 1000, "min_length_scale": 0.5,
        "budget": {"population": 128, "elites": 16, "iterations": 8, "init_std": 0.3},
    },
    "track": {
        "N": 15, "T": 20, "n_train": 9, "n_eval": 1,
        "d_thresh": [1.0, 0.3, 1.0, 1.0, 1.0, 1.0],
        "step_cap": 2000,
        "budget": {"population": 128, "elites": 16, "iterations": 8, "init_std": [0.3, 0.01]},
    },
    "flappy": {
        "N": 45, "T": 10, "n_train": 15, "n_eval": 50,
        "d_thresh": [40.0, 40.0, 1.0, 1.0],
        "step_cap": 100000, "n_target": 50, "n_target_train": 10,
        "budget": {"population": 256, "elites": 32, "iterations": 20, "init_std": 0.5},
    },
}

SUBSTREAMS = ("env", "train_env", "eval_env", "demo", "fit", "optimizer", "verify")


@dataclass
class RunConfig:
    """Every field is optional in the JSON document; missing ones take the
    family default."""

    env: str = "tube"
    seed: int = 0
    N: int | None = None
    T: int | None = None
    eta: float = 2.0
    beta: float = 0.0
    d_thresh: list | float | None = None
    budget: dict | None = None
    step_cap: int | None = None
    n_train: int | None = None
    n_eval: int | None = None
    n_target: int | None = None
    n_target_train: int | None = None
    safe_set_scale: float = 1.0
    fit_restarts: int = 2
    fit_iterations: int = 60
    min_length_scale: float | None = None
    max_rows: int = 400
    verify_samples: int = 1000
    verify_horizon: int = 500
    baseline_horizon: int = 10
    out: str = "runs"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.env not in FAMILY_DEFAULTS:
            raise ConfigError(f"env: unknown family {self.env!r}")
        for k, v in FAMILY_DEFAULTS[self.env].items():
            if hasattr(self, k) and getattr(self, k) is None:
                setattr(self, k, v)
        self.validate()

    def validate(self):
        for name in ("N", "T", "step_cap", "n_train", "n_eval", "fit_restarts", "max_rows", "verify_samples",
                     "verify_horizon", "baseline_horizon"):
            v = getattr(self, name)
            if v is None or not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name}: expected an integer, got {v!r}")
            if v < (0 if name in ("N", "step_cap") else 1):
                raise ConfigError(f"{name}: must be positive, got {v}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed: expected an integer, got {self.seed!r}")
        if not 0.0 <= float(self.beta) <= 1.0:
            raise ConfigError(f"beta: must lie in [0, 1], got {self.beta}")
        if not float(self.eta) > 0:
            raise ConfigError(f"eta: must be positive, got {self.eta}")
        if not np.all(np.asarray(self.d_thresh, dtype=float) > 0):
            raise ConfigError(f"d_thresh: must be positive, got {self.d_thresh}")
        if self.min_length_scale is not None and not float(self.min_length_scale) > 0:
            raise ConfigError(f"min_length_scale: must be positive, got {self.min_length_scale}")
        if not 0.0 <= float(self.safe_set_scale) <= 1.0:
            raise ConfigError(f"safe_set_scale: must lie in [0, 1], got {self.safe_set_scale}")
        if self.env == "flappy" and self.T > 12:
            raise ConfigError("T: Flappy horizons are limited to 12 steps by the safety view")
        try:
            self.optimizer_budget()
        except TypeError as exc:
            raise ConfigError(f"budget: {exc}") from exc

    # derived objects ------------------------------------------------------
    def optimizer_budget(self) -> optim.Budget:
        b = dict(self.budget)
        if isinstance(b.get("init_std"), list):
            b["init_std"] = np.array(b["init_std"], dtype=float)
        return optim.Budget(**b)

    def fit_config(self) -> gp.FitConfig:
        return gp.FitConfig(restarts=self.fit_restarts, iterations=self.fit_iterations, seed=self.substream("fit"),
                            min_length_scale=self.min_length_scale)

    def substream(self, name: str) -> int:
        """Deterministic integer seed of a named substream."""
        if name not in SUBSTREAMS:
            raise ConfigError(f"unknown seed substream {name!r}")
        ss = np.random.SeedSequence([self.seed, SUBSTREAMS.index(name)])
        return int(ss.generate_state(1)[0])

    # persistence ----------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        return cls.from_dict(doc)


def content_hash(directory) -> str:
    """SHA-256 over the sorted file names and contents of a directory."""
    h = hashlib.sha256()
    root = Path(directory)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()
