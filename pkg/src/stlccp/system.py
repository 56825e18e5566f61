"""Discrete-time linear dynamics ``x_{t+1} = A x_t + B u_t`` with box bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """System matrices plus per-coordinate state and input bounds.

    Bounds default to unbounded (``-inf``/``inf``).
    """

    A: np.ndarray
    B: np.ndarray
    x_lo: np.ndarray = None
    x_hi: np.ndarray = None
    u_lo: np.ndarray = None
    u_hi: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape != (n, m):
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        bounds = {
            "x_lo": (self.x_lo, n, -np.inf),
            "x_hi": (self.x_hi, n, np.inf),
            "u_lo": (self.u_lo, m, -np.inf),
            "u_hi": (self.u_hi, m, np.inf),
        }
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        for name, (val, size, default) in bounds.items():
            v = np.full(size, default) if val is None else np.asarray(val, dtype=float).reshape(-1)
            if v.shape != (size,):
                raise ValueError(f"{name} must have length {size}")
            object.__setattr__(self, name, _frozen(v))
        if np.any(self.x_lo > self.x_hi) or np.any(self.u_lo > self.u_hi):
            raise ValueError("lower bounds must not exceed upper bounds")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u

    def rollout(self, x0, u) -> "Trajectory":
        return rollout(self, x0, u)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x`` with shape (T+1, n) and inputs ``u`` with shape (T, m)."""

    x: np.ndarray
    u: np.ndarray = field(default=None)

    def __post_init__(self):
        x = _states(self.x)
        object.__setattr__(self, "x", _frozen(x))
        if self.u is not None:
            u = np.asarray(self.u, dtype=float)
            if u.ndim == 1:
                u = u.reshape(-1, 1)
            if u.shape[0] != x.shape[0] - 1:
                raise ValueError(f"{x.shape[0]} states need {x.shape[0] - 1} inputs, got {u.shape[0]}")
            object.__setattr__(self, "u", _frozen(u))

    @property
    def T(self) -> int:
        return self.x.shape[0] - 1


def rollout(sys: LinearSystem, x0, u) -> Trajectory:
    """Simulate ``sys`` from ``x0`` under the inputs ``u`` (shape (T, m))."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and sys.m == 1:
        u = u.reshape(-1, 1)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have length {sys.n}, got {x0.shape}")
    if u.ndim != 2 or u.shape[1] != sys.m:
        raise ValueError(f"u must have shape (T, {sys.m}), got {u.shape}")
    x = np.empty((u.shape[0] + 1, sys.n))
    x[0] = x0
    for t in range(u.shape[0]):
        x[t + 1] = sys.A @ x[t] + sys.B @ u[t]
    return Trajectory(x, u)


def double_integrator() -> LinearSystem:
    """Planar double integrator with state (px, py, vx, vy) and input (ax, ay)."""
    I2, Z2 = np.eye(2), np.zeros((2, 2))
    return LinearSystem(
        A=np.block([[I2, I2], [Z2, I2]]),
        B=np.vstack([Z2, I2]),
        x_lo=[0.0, 0.0, -1.0, -1.0],
        x_hi=[10.0, 10.0, 1.0, 1.0],
        u_lo=[-0.2, -0.2],
        u_hi=[0.2, 0.2],
    )


def as_states(x) -> np.ndarray:
    """Accept a Trajectory or an array of states and return the (T+1, n) array."""
    if isinstance(x, Trajectory):
        return x.x
    return _states(x)


def _states(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError(f"states must be a (T+1, n) array, got shape {x.shape}")
    return x
