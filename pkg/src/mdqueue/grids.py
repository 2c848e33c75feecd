"""Uniform-grid containers for paths and 2-D density fields, plus quadrature helpers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridPath",
    "GridField2D",
    "trap_weights",
    "trap_integral",
    "conv_trap",
    "cumtrap",
]


def trap_weights(n_nodes: int, dt: float) -> np.ndarray:
    """Trapezoid weights for n_nodes uniformly spaced nodes with step dt."""
    if n_nodes == 1:
        return np.zeros(1)
    w = np.full(n_nodes, dt)
    w[0] = w[-1] = dt / 2.0
    return w


def trap_integral(values: np.ndarray, dt: float) -> float:
    return float(trap_weights(len(values), dt) @ values)


def conv_trap(a: np.ndarray, b: np.ndarray, dt: float) -> np.ndarray:
    """Prefix convolutions c_i = int_0^{t_i} a(t_i - s) b(s) ds by the trapezoid rule.

    a and b are nodal samples on the same uniform grid; c_0 = 0 exactly.
    """
    n = len(a)
    c = dt * np.convolve(a, b)[:n]
    c -= 0.5 * dt * (a[0] * b + b[0] * a)
    return c


def cumtrap(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral along a uniform grid, starting at 0."""
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


@dataclass(frozen=True)
class GridPath:
    """Scalar path sampled at t_i = i * T / N on [0, T]."""

    horizon: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or len(vals) < 3:
            raise ValueError("GridPath needs at least 3 nodes (N >= 2)")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridPath values must be finite")

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, len(self.values))

    def weights(self) -> np.ndarray:
        return trap_weights(len(self.values), self.dt)

    def interp(self, t):
        """Linear interpolation, constant continuation beyond the horizon."""
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.times, self.values)

    def integral(self) -> float:
        return trap_integral(self.values, self.dt)

    def cumulative(self, y):
        """int_0^y of this path seen as a density, with partial-cell trapezoid."""
        y = np.asarray(y, dtype=float)
        cum = cumtrap(self.values, self.dt)
        yc = np.clip(y, 0.0, self.horizon)
        idx = np.minimum((yc / self.dt).astype(int), self.n_steps - 1)
        x0 = idx * self.dt
        frac = yc - x0
        v0 = self.values[idx]
        v1 = self.values[idx + 1]
        vy = v0 + (v1 - v0) * (frac / self.dt)
        return cum[idx] + 0.5 * frac * (v0 + vy)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridPath":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["t", "value"]:
            raise ValueError(f"{path}: expected header 't,value'")
        t = np.array([float(r[0]) for r in rows[1:]])
        v = np.array([float(r[1]) for r in rows[1:]])
        if len(t) < 3 or np.any(np.diff(t) <= 0):
            raise ValueError(f"{path}: need strictly increasing t with N >= 2")
        dt = np.diff(t)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12) or abs(t[0]) > 1e-12:
            raise ValueError(f"{path}: grid must be uniform and start at 0")
        return cls(horizon=float(t[-1]), values=v)


@dataclass(frozen=True)
class GridField2D:
    """Density field on [0, 1] x [0, T]: values[ix, it] at (x_ix, t_it)."""

    t_horizon: float
    values: np.ndarray  # shape (M+1, N+1)
    x_max: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise ValueError("GridField2D needs at least a 2x2 node grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridField2D values must be finite")
        if not (self.t_horizon > 0 and self.x_max > 0):
            raise ValueError("grid extents must be positive")

    @property
    def x_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.values.shape[0])

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_horizon, self.values.shape[1])

    @property
    def dx(self) -> float:
        return self.x_max / (self.values.shape[0] - 1)

    @property
    def dt(self) -> float:
        return self.t_horizon / (self.values.shape[1] - 1)

    def integral_sq(self) -> float:
        """Trapezoid quadrature of the squared field over its rectangle."""
        wx = trap_weights(self.values.shape[0], self.dx)
        wt = trap_weights(self.values.shape[1], self.dt)
        return float(wx @ (self.values**2) @ wt)

    def interp_t(self, t) -> np.ndarray:
        """Columns linearly interpolated in t; zero beyond the horizon."""
        t = np.asarray(t, dtype=float)
        cols = np.empty((self.values.shape[0],) + t.shape)
        for ix in range(self.values.shape[0]):
            cols[ix] = np.interp(t, self.t_grid, self.values[ix], right=0.0)
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "value"])
            for it, t in enumerate(self.t_grid):
                for ix, x in enumerate(self.x_grid):
                    w.writerow([repr(float(x)), repr(float(t)), repr(float(self.values[ix, it]))])

    @classmethod
    def from_csv(cls, path) -> "GridField2D":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["x", "t", "value"]:
            raise ValueError(f"{path}: expected header 'x,t,value'")
        data = np.array([[float(c) for c in r] for r in rows[1:]])
        xs = np.unique(data[:, 0])
        ts = np.unique(data[:, 1])
        if len(xs) * len(ts) != len(data):
            raise ValueError(f"{path}: not a full grid")
        vals = np.empty((len(xs), len(ts)))
        ix = np.searchsorted(xs, data[:, 0])
        it = np.searchsorted(ts, data[:, 1])
        vals[ix, it] = data[:, 2]
        return cls(t_horizon=float(ts[-1]), values=vals, x_max=float(xs[-1]))
