"""Sampled boundary controls on ``sigma x [0, T]`` and ``sigma x [0, 2T]``."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GridMismatch

__all__ = ["Control", "ExtendedControl", "check_same_grid"]


@dataclass(frozen=True)
class Control:
    """Boundary source sampled on the sigma nodes and a uniform time grid.

    ``values[i, n]`` is the amplitude at ``x[i]``, ``t[n]``. ``weight`` holds
    the boundary density ``rho(x, 0)`` used by the outer inner product; it
    defaults to ones.
    """

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (x.size, t.size):
            raise GridMismatch(f"values shape {v.shape} != ({x.size}, {t.size})")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        w = np.ones_like(x) if self.weight is None else np.asarray(self.weight, dtype=float)
        if w.shape != x.shape:
            raise GridMismatch("weight must be sampled on the x nodes")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weight", w)

    @classmethod
    def from_function(cls, func, x, t, weight=None):
        """Sample ``func(X, T)`` on the tensor grid (``X`` varies along rows)."""
        X, Tt = np.meshgrid(np.asarray(x, float), np.asarray(t, float), indexing="ij")
        return cls(x, t, np.broadcast_to(func(X, Tt), X.shape), weight)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def with_values(self, values):
        return replace(self, values=values)

    def zeros_like(self):
        return self.with_values(np.zeros_like(self.values))

    def __add__(self, other):
        check_same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        check_same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    # -- CSV: header lines "# key=value", then rows "x_index,t_index,value"
    def to_csv(self, path) -> None:
        ii, nn = np.meshgrid(np.arange(self.x.size), np.arange(self.t.size), indexing="ij")
        header = [f"# kind={type(self).__name__}"]
        for key in ("x", "t", "weight"):
            header.append(f"# {key}=" + " ".join(repr(float(a)) for a in getattr(self, key)))
        header.append("x_index,t_index,value")
        body = np.column_stack([ii.ravel(), nn.ravel(), self.values.ravel()])
        np.savetxt(path, body, fmt=["%d", "%d", "%.17g"], delimiter=",",
                   header="\n".join(header), comments="")

    @classmethod
    def from_csv(cls, path):
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
        x, t, w = (np.array([float(a) for a in meta[k].split()]) for k in ("x", "t", "weight"))
        body = np.loadtxt(path, delimiter=",", comments="#", skiprows=len(meta) + 1, ndmin=2)
        values = np.zeros((x.size, t.size))
        values[body[:, 0].astype(int), body[:, 1].astype(int)] = body[:, 2]
        klass = ExtendedControl if meta.get("kind") == "ExtendedControl" else Control
        return klass(x, t, values, w)


@dataclass(frozen=True)
class ExtendedControl(Control):
    """Control on the doubled interval ``[0, 2T]``."""

    @property
    def T(self) -> float:
        return 0.5 * self.horizon


def check_same_grid(f: Control, g: Control) -> None:
    if f.values.shape != g.values.shape or not (
        np.allclose(f.x, g.x, rtol=0, atol=1e-12) and np.allclose(f.t, g.t, rtol=0, atol=1e-12)
    ):
        raise GridMismatch("controls live on different grids")
