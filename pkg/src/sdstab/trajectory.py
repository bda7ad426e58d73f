"""Positive trajectories of the minimal second-order scheme under constant input.

While the states stay above 1 every bit is +1 and the recurrence is linear,
so a trajectory started from a trigger ``(v_{-(k+1)}, ..., v_{-1})`` is

    v_n = sum_i h_i^n v_{-i} + (y - 1) sum_{i=0}^{n} h_1^{i-1}

where ``(h_1^n, ..., h_{k+1}^n)`` is the first row of ``H^{n+1}`` for the
companion matrix ``H`` of the filter. Triggers are stored oldest first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from . import _io
from .filters import make_minimal_filter
from .quantizer import run

_HARD_HORIZON = 10**8


def _check_k(k: int, kmin: int = 1) -> int:
    if int(k) != k or k < kmin:
        raise ValueError(f"k must be an integer >= {kmin}, got {k!r}")
    return int(k)


@dataclass(frozen=True)
class CoefficientTable:
    """``rows[n] = (h_1^n, ..., h_{k+1}^n)`` for ``n = 0 .. n_max``."""

    k: int
    rows: np.ndarray

    @property
    def n_max(self) -> int:
        return self.rows.shape[0] - 1

    @property
    def h1(self) -> np.ndarray:
        return self.rows[:, 0]

    def to_csv(self, path) -> None:
        header = ["n"] + [f"h{i}" for i in range(1, self.k + 2)]
        _io.write_csv(path, header, ([n, *row] for n, row in enumerate(self.rows)))


def coefficient_table(k: int, n_max: int) -> CoefficientTable:
    """Coefficients by the recursion ``h_i^n = h_i h_1^{n-1} + h_{i+1}^{n-1}``."""
    k = _check_k(k)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    h = make_minimal_filter(k).taps
    rows = np.empty((n_max + 1, k + 1))
    rows[0] = h
    for n in range(1, n_max + 1):
        prev = rows[n - 1]
        rows[n, :k] = h[:k] * prev[0] + prev[1:]
        rows[n, k] = h[k] * prev[0]
    return CoefficientTable(k, rows)


def companion_matrix(k: int) -> np.ndarray:
    k = _check_k(k)
    H = np.zeros((k + 1, k + 1))
    H[0] = make_minimal_filter(k).taps
    H[np.arange(1, k + 1), np.arange(k)] = 1.0
    return H


def matrix_power_oracle(k: int, n: int) -> np.ndarray:
    """First row of ``H^{n+1}`` by dense matrix powering."""
    k = _check_k(k)
    if n < 0:
        raise ValueError("n must be >= 0")
    if k + 1 > 64:
        raise ValueError("oracle limited to k + 1 <= 64")
    return np.linalg.matrix_power(companion_matrix(k), n + 1)[0].copy()


def h1_sequence(k: int, n_max: int) -> np.ndarray:
    """``h_1^{-1}, h_1^0, ..., h_1^{n_max}`` (length ``n_max + 2``).

    ``h_1^n = (1 + 1/k) h_1^{n-1} - (1/k) h_1^{n-1-k}`` with ``h_1^{-1} = 1``
    and zero before that, i.e. the impulse response of an all-pole filter.
    """
    k = _check_k(k)
    a = np.zeros(k + 2)
    a[0] = 1.0
    a[1] = -(1.0 + 1.0 / k)
    a[k + 1] = 1.0 / k
    imp = np.zeros(n_max + 2)
    imp[0] = 1.0
    return lfilter([1.0], a, imp)


def delta_h1_bounds(k: int) -> tuple[float, float]:
    """``(alpha, beta)`` bracketing the increments of ``h_1^n`` (``k >= 3``)."""
    k = _check_k(k, 3)
    alpha = (1 + 1 / k) / k
    beta = (1 + 1 / k) ** (k - 1) / k
    return alpha, beta


def critical_trigger(k: int) -> np.ndarray:
    """``(-1, ..., -1, 1)`` ordered ``v_{-(k+1)} .. v_{-1}``."""
    k = _check_k(k, 2)
    t = -np.ones(k + 1)
    t[-1] = 1.0
    return t


class CoverageBounds(NamedTuple):
    root: float
    simple: float


def coverage_upper_bound(k: int, y: float) -> CoverageBounds:
    """Upper bounds on the critical coverage for constant input ``y``.

    ``root`` comes from the larger zero of the parabola minus one,
    ``simple = 4e/(1-y) - (k+1)`` from its ``k >= 3`` simplification.
    """
    k = _check_k(k, 3)
    if not y < 1:
        raise ValueError("y must be < 1")
    root = (4 * k / (k + 1)) * (1 + 1 / k) ** (k - 1) / (1 - y) - (2 * k - 2)
    simple = 4 * math.e / (1 - y) - (k + 1)
    return CoverageBounds(root, simple)


def _check_parabola_domain(k: int, y: float) -> int:
    k = _check_k(k, 3)
    if not (1 - 2 / k <= y < 1):
        raise ValueError(f"y={y} outside [1 - 2/k, 1) for k={k}")
    return k


def parabola_coefficients(k: int, y: float) -> tuple[float, float, float]:
    """``(quadratic, linear, constant)`` coefficients of the envelope in ``n``."""
    k = _check_parabola_domain(k, y)
    alpha, beta = delta_h1_bounds(k)
    gamma = (1 + 1 / k) * (1 - 1 / (2 * k))
    mu = 2 * beta
    return (y - 1) * alpha / 2, gamma * (y - 1) + mu, 2 / k + y


def parabola_bound(k: int, y: float, n) -> np.ndarray | float:
    a, b, c = parabola_coefficients(k, y)
    n = np.asarray(n, dtype=float)
    out = a * n * n + b * n + c
    return float(out) if out.ndim == 0 else out


def parabola_max(y: float, k: int) -> float:
    """Vertex value ``M(y, k)`` of the parabolic envelope."""
    k = _check_parabola_domain(k, y)
    alpha, _ = delta_h1_bounds(k)
    gamma = (1 + 1 / k) * (1 - 1 / (2 * k))
    mu = (2 / k) * (1 + 1 / k) ** (k - 1)
    return y + 2 / k - (gamma * (y - 1) + mu) ** 2 / (2 * alpha * (y - 1))


@dataclass(frozen=True)
class TriggerAnalysis:
    """Critical trajectory for constant input ``y``.

    ``trajectory`` holds the states above 1 (so ``coverage`` is its length)
    and ``next_value`` is the first state that drops to ``<= 1``.
    """

    k: int
    y: float
    trigger: np.ndarray
    coverage: int
    trajectory: np.ndarray
    next_value: Optional[float]

    @property
    def peak(self) -> float:
        """Sharp bound ``M_s``: the largest state along the trajectory."""
        return float(self.trajectory.max()) if self.coverage else 1.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "y": self.y,
            "trigger": self.trigger.tolist(),
            "coverage": self.coverage,
            "peak": self.peak,
            "trajectory": self.trajectory.tolist(),
            "next_value": self.next_value,
        }


def critical_values(k: int, y: float, n_max: int) -> np.ndarray:
    """``2 h_1^n - 1 + (y - 1) sum_{i=0}^{n} h_1^{i-1}`` for ``n = 0 .. n_max``."""
    h1 = h1_sequence(k, n_max)
    partial = np.cumsum(h1)[:-1]  # sum of h_1^{-1} .. h_1^{n-1}
    return 2 * h1[1:] - 1 + (y - 1) * partial


def _horizon(k: int, y: float) -> int:
    if k >= 3:
        return int(math.ceil(max(coverage_upper_bound(k, y)))) + 10
    return 64


def critical_trajectory(k: int, y: float) -> TriggerAnalysis:
    """Closed-form trajectory of the critical trigger at constant input ``y``."""
    k = _check_k(k, 2)
    trig = critical_trigger(k)
    if not y < 1:
        raise ValueError("y must be < 1")
    if y <= 1 - 2 / k:
        return TriggerAnalysis(k, y, trig, 0, np.empty(0), None)
    # safety cap from the coverage bound; grow geometrically up to it
    cap = _horizon(k, y) if k >= 3 else _HARD_HORIZON
    horizon = min(cap, 256)
    while True:
        xi = critical_values(k, y, horizon)
        below = np.nonzero(xi <= 1)[0]
        if below.size:
            cov = int(below[0])
            return TriggerAnalysis(k, y, trig, cov, xi[:cov].copy(), float(xi[cov]))
        if horizon >= cap:
            raise RuntimeError(f"critical trajectory did not end within {horizon} steps")
        horizon = min(cap, horizon * 4)


def sharp_bound(k: int, y: float) -> float:
    """``M_s(y, k)``, the largest critical-trajectory state (1 if none)."""
    return max(1.0, critical_trajectory(k, y).peak)


def simulate_trigger(k: int, trigger: Sequence[float], y: float, horizon: Optional[int] = None):
    """Simulate a trigger under constant input; returns the run of states
    beyond ``[-1, 1]`` starting at ``n = 0`` (empty if ``v_0`` is inside)."""
    k = _check_k(k, 1)
    f = make_minimal_filter(k)
    if horizon is None:
        horizon = _horizon(k, y) if (k >= 3 and y < 1) else 256
    v = run(f, np.full(horizon, float(y)), init=trigger).v
    if abs(v[0]) <= 1:
        return v[:0]
    side = np.sign(v[0])
    inside = np.nonzero(side * v <= 1)[0]
    return v[: inside[0]] if inside.size else v


def trigger_coverage(k: int, trigger: Sequence[float], y: float) -> int:
    return int(simulate_trigger(k, trigger, y).size)


def trajectory_closed_form(k: int, trigger: Sequence[float], y: float, n_max: int) -> np.ndarray:
    """States ``v_0 .. v_{n_max}`` assuming every bit is +1."""
    table = coefficient_table(k, n_max)
    newest_first = np.asarray(trigger, dtype=float)[::-1]
    h1 = h1_sequence(k, n_max)
    partial = np.cumsum(h1)[:-1]
    return table.rows @ newest_first + (y - 1) * partial
