"""Control-affine plant models and bounded disturbance signals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Unicycle",
    "GenericAffine",
    "Constant",
    "Sinusoid",
    "DisturbanceSignal",
    "plant_deriv",
]


class Unicycle:
    """Mobile robot with an off-axis control point.

    State (px, py, theta), input (v, omega).  The position rates are
    g(theta) u plus the external disturbance; the heading integrates omega
    and is undisturbed.  The offset length l makes g(theta) invertible, so
    the control point can be steered in any direction.
    """

    n = 3
    m = 2
    cbf_state = (0, 1)  # barrier predicates act on the position sub-state
    disturbed = (0, 1)

    def __init__(self, l: float = 0.036):
        if l == 0:
            raise ValueError("offset length must be nonzero")
        self.l = float(l)

    def f(self, x) -> np.ndarray:
        return np.zeros(3)

    def g(self, x) -> np.ndarray:
        th = x[2]
        l = self.l
        return np.array(
            [
                [math.cos(th), -l * math.sin(th)],
                [math.sin(th), l * math.cos(th)],
                [0.0, 1.0],
            ]
        )

    def lift_disturbance(self, d) -> np.ndarray:
        out = np.zeros(self.n)
        out[list(self.disturbed)] = d
        return out

    def lift_gradient(self, grad_sub) -> np.ndarray:
        out = np.zeros(self.n)
        out[list(self.cbf_state)] = grad_sub
        return out

    def cbf_substate(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.cbf_state)]


class GenericAffine:
    """Plant from expression tables: f and g entries are expressions in
    x0..x{n-1} (numpy math names available)."""

    _NAMES = {
        "cos": math.cos,
        "sin": math.sin,
        "tan": math.tan,
        "exp": math.exp,
        "sqrt": math.sqrt,
        "abs": abs,
        "pi": math.pi,
    }

    def __init__(self, f_exprs, g_exprs, cbf_state=None, disturbed=None):
        self.n = len(f_exprs)
        if len(g_exprs) != self.n:
            raise ValueError("g must have one row per state dimension")
        self.m = len(g_exprs[0])
        if any(len(row) != self.m for row in g_exprs):
            raise ValueError("g rows must have equal length")
        self._f = [self._compile(e) for e in f_exprs]
        self._g = [[self._compile(e) for e in row] for row in g_exprs]
        self.cbf_state = tuple(cbf_state) if cbf_state is not None else tuple(range(self.n))
        self.disturbed = tuple(disturbed) if disturbed is not None else tuple(range(self.n))

    def _compile(self, expr: str):
        code = compile(str(expr), "<plant>", "eval")
        names = dict(self._NAMES)

        def fn(x):
            env = dict(names)
            for i, v in enumerate(x):
                env[f"x{i}"] = float(v)
            return float(eval(code, {"__builtins__": {}}, env))

        return fn

    def f(self, x) -> np.ndarray:
        return np.array([fi(x) for fi in self._f])

    def g(self, x) -> np.ndarray:
        return np.array([[gij(x) for gij in row] for row in self._g])

    def lift_disturbance(self, d) -> np.ndarray:
        out = np.zeros(self.n)
        out[list(self.disturbed)] = d
        return out

    def lift_gradient(self, grad_sub) -> np.ndarray:
        out = np.zeros(self.n)
        out[list(self.cbf_state)] = grad_sub
        return out

    def cbf_substate(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.cbf_state)]


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: float) -> float:
        return self.value

    @property
    def bound(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class Sinusoid:
    """amplitude * cos(frequency * t + phase)."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        return self.amplitude * math.cos(self.frequency * t + self.phase)

    @property
    def bound(self) -> float:
        return abs(self.amplitude)


class DisturbanceSignal:
    """Per-channel sums of bounded terms.  The overall bound is computed by
    the test harness only; the controller never sees it."""

    def __init__(self, channels):
        self.channels = [list(terms) for terms in channels]

    def value(self, t: float) -> np.ndarray:
        return np.array(
            [sum(term(t) for term in terms) for terms in self.channels]
        )

    def bound(self) -> float:
        per_channel = [sum(term.bound for term in terms) for terms in self.channels]
        return float(np.linalg.norm(per_channel))

    @property
    def n_channels(self) -> int:
        return len(self.channels)


def plant_deriv(plant, x, u, d, t: float) -> np.ndarray:
    """State rate f(x) + g(x) u + lifted disturbance."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if u.shape != (plant.m,):
        raise ValueError(f"input has shape {u.shape}, plant expects ({plant.m},)")
    if x.shape != (plant.n,):
        raise ValueError(f"state has shape {x.shape}, plant expects ({plant.n},)")
    return plant.f(x) + plant.g(x) @ u + plant.lift_disturbance(d)
