"""Task executions: state/input trajectories plus feasibility bookkeeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hpl.errors import SerializationError


@dataclass
class Execution:
    """``states`` has D+1 rows, ``inputs`` has D rows (u_k drives x_k -> x_{k+1})."""

    env_id: str
    states: np.ndarray
    inputs: np.ndarray
    dt: float = 1.0
    complete: bool = True
    modes: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(len(self.states), -1)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.size == 0:
            self.inputs = self.inputs.reshape(0, self.inputs.shape[-1] if self.inputs.ndim > 1 else 0)

    @property
    def duration(self) -> int:
        """Number of steps D."""
        return len(self.states) - 1

    @property
    def time(self) -> float:
        return self.duration * self.dt

    def check(self, env) -> dict:
        """Feasibility checks: constraints at every state, inputs in U, end in P."""
        state_ok = np.asarray(env.constraints_ok(self.states))
        input_ok = np.asarray(env.input_ok(self.inputs)) if len(self.inputs) else np.ones(0, bool)
        dyn = 0.0
        for k in range(self.duration):
            nxt = env.step(self.states[k], self.inputs[k])
            dyn = max(dyn, float(np.max(np.abs(nxt - self.states[k + 1]))))
        return {
            "state_violations": int(np.sum(~state_ok)),
            "input_violations": int(np.sum(~input_ok)),
            "dynamics_residual": dyn,
            "reached_target": bool(env.done(self.states[-1])),
        }

    def is_feasible(self, env) -> bool:
        c = self.check(env)
        return (
            c["state_violations"] == 0
            and c["input_violations"] == 0
            and c["dynamics_residual"] <= 1e-9
            and c["reached_target"]
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        nx = self.states.shape[1]
        nu = self.inputs.shape[1] if self.inputs.ndim == 2 else 0
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# env_id={self.env_id}", f"dt={self.dt!r}", f"complete={int(self.complete)}"])
            w.writerow(["k"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)])
            for k, x in enumerate(self.states):
                u = self.inputs[k] if k < len(self.inputs) else [""] * nu
                w.writerow([k] + [repr(float(v)) for v in x] + [v if v == "" else repr(float(v)) for v in u])

    @classmethod
    def from_csv(cls, path) -> "Execution":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        try:
            meta = dict(item.lstrip("# ").split("=", 1) for item in rows[0])
            header = rows[1]
            nx = sum(h.startswith("x") for h in header)
            states, inputs = [], []
            for row in rows[2:]:
                states.append([float(v) for v in row[1 : 1 + nx]])
                if row[1 + nx :] and row[1 + nx] != "":
                    inputs.append([float(v) for v in row[1 + nx :]])
            nu = len(header) - 1 - nx
            return cls(
                env_id=meta["env_id"],
                states=np.array(states),
                inputs=np.array(inputs).reshape(-1, nu),
                dt=float(meta["dt"]),
                complete=bool(int(meta["complete"])),
            )
        except (IndexError, KeyError, ValueError) as exc:
            raise SerializationError(f"malformed execution CSV {path}: {exc}") from exc
