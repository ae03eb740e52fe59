"""Offline temporal-logic evaluation over sampled trajectories.

This is the acceptance oracle for the closed loop: it shares nothing with
the barrier construction.  Boolean verdicts follow the recursive semantics
on discretized signals; quantitative robustness uses the standard hard
min/max semantics (never the smooth minimum).  Dense-time quantifiers are
evaluated over the sample instants inside each window plus the exact
window endpoints obtained by linear interpolation.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

from .formulas import (
    Always,
    And,
    Eventually,
    Formula,
    NotPred,
    Pred,
    TrueF,
    Until,
    eval_predicate,
)

__all__ = [
    "SignalDomainError",
    "SampledSignal",
    "Verdict",
    "eval_boolean",
    "eval_robustness",
    "monitor_verdict",
]

_EDGE_TOL = 1e-9


class SignalDomainError(ValueError):
    """A temporal window reaches beyond the sampled signal."""


@dataclass
class SampledSignal:
    """Piecewise-linear signal: strictly increasing times, one state row
    per sample."""

    times: np.ndarray
    states: np.ndarray

    def __init__(self, times, states):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("signal needs at least two samples")
        if len(self.times) != len(self.states):
            raise ValueError("times and states disagree in length")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    def state_at(self, t: float) -> np.ndarray:
        ts = self.times
        if t < ts[0] - _EDGE_TOL or t > ts[-1] + _EDGE_TOL:
            raise SignalDomainError(
                f"time {t} outside signal domain [{ts[0]}, {ts[-1]}]"
            )
        t = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - w) * self.states[i] + w * self.states[i + 1]

    def window_times(self, lo: float, hi: float) -> list[float]:
        """Sample instants strictly inside (lo, hi) plus both endpoints."""
        ts = self.times
        i = bisect_right(ts, lo)
        j = bisect_left(ts, hi)
        pts = [lo]
        pts.extend(float(v) for v in ts[i:j])
        if hi > lo:
            pts.append(hi)
        return pts

    def inner_samples(self, lo: float, hi: float) -> list[float]:
        """Sample instants strictly inside the open interval (lo, hi)."""
        ts = self.times
        i = bisect_right(ts, lo)
        j = bisect_left(ts, hi)
        return [float(v) for v in ts[i:j]]


@dataclass(frozen=True)
class Verdict:
    satisfied: bool
    robustness: float


class _Evaluator:
    """Memoized recursive evaluation; one instance per query."""

    def __init__(self, signal: SampledSignal, table: dict, robust: bool):
        self.signal = signal
        self.table = table
        self.robust = robust
        self.memo: dict[tuple[int, float], object] = {}

    # combination primitives for the two semantics
    def _top(self):
        return math.inf if self.robust else True

    def _neg(self, v):
        return -v if self.robust else (not v)

    def _all(self, values):
        return min(values) if self.robust else all(values)

    def _any(self, values):
        return max(values) if self.robust else any(values)

    def _both(self, a, b):
        return min(a, b) if self.robust else (a and b)

    def _check_window(self, t: float, t_b: float):
        if t + t_b > self.signal.t_end + _EDGE_TOL:
            raise SignalDomainError(
                f"window [{t}, {t + t_b}] exceeds signal end {self.signal.t_end}"
            )

    def eval(self, f: Formula, t: float):
        key = (id(f), t)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        val = self._eval(f, t)
        self.memo[key] = val
        return val

    def _eval(self, f: Formula, t: float):
        if isinstance(f, TrueF):
            return self._top()
        if isinstance(f, Pred):
            h = eval_predicate(self.table[f.name], self.signal.state_at(t))
            return h if self.robust else h >= 0
        if isinstance(f, NotPred):
            h = eval_predicate(self.table[f.name], self.signal.state_at(t))
            return -h if self.robust else not (h >= 0)
        if isinstance(f, And):
            return self._all([self.eval(c, t) for c in f.children])
        if isinstance(f, Always):
            self._check_window(t, f.interval.t_b)
            pts = self.signal.window_times(t + f.interval.t_a, t + f.interval.t_b)
            return self._all([self.eval(f.child, p) for p in pts])
        if isinstance(f, Eventually):
            self._check_window(t, f.interval.t_b)
            pts = self.signal.window_times(t + f.interval.t_a, t + f.interval.t_b)
            return self._any([self.eval(f.child, p) for p in pts])
        if isinstance(f, Until):
            return self._eval_until(f, t)
        raise TypeError(f"not a formula: {f!r}")

    def _eval_until(self, f: Until, t: float):
        # exists t1 in [t+ta, t+tb] with (right at t1) and (left on every
        # candidate instant of [t, t1]); the left-clause instants are the
        # samples strictly inside (t, t1) plus both endpoints.
        self._check_window(t, f.interval.t_b)
        witnesses = self.signal.window_times(t + f.interval.t_a, t + f.interval.t_b)
        left_at_t = self.eval(f.left, t)
        samples = self.signal.inner_samples(t, t + f.interval.t_b)
        best = None
        si = 0
        prefix = self._top()
        for t1 in witnesses:
            while si < len(samples) and samples[si] < t1:
                prefix = self._both(prefix, self.eval(f.left, samples[si]))
                si += 1
            clause = self._both(
                self.eval(f.right, t1),
                self._both(left_at_t, self._both(prefix, self.eval(f.left, t1))),
            )
            best = clause if best is None else self._any([best, clause])
            if not self.robust and best:
                return True
        return best


def eval_boolean(f: Formula, signal: SampledSignal, t: float, table: dict) -> bool:
    """Recursive boolean semantics at time t over the sampled signal."""
    return bool(_Evaluator(signal, table, robust=False).eval(f, t))


def eval_robustness(f: Formula, signal: SampledSignal, t: float, table: dict) -> float:
    """Quantitative margin, sign-consistent with ``eval_boolean`` on the
    same sample set (0 is the boundary)."""
    return float(_Evaluator(signal, table, robust=True).eval(f, t))


def monitor_verdict(f: Formula, signal: SampledSignal, table: dict, t: float = 0.0) -> Verdict:
    return Verdict(
        satisfied=eval_boolean(f, signal, t, table),
        robustness=eval_robustness(f, signal, t, table),
    )
