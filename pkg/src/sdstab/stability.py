"""Stability certificates for the minimal second-order scheme.

Regimes for a constant input (or signal amplitude) ``y`` and filter size ``k``:

* ``y <= 1 - 2/k``: the l1 criterion applies and ``|v| <= 1``;
* ``1 - 2/k < y <= y(k)``: the gap function is non-negative and states stay
  in ``[-1, M(y, k)]``;
* ``y > y(k)``: no certificate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

from .filters import FirFilter, l1_norm, make_minimal_filter
from .trajectory import critical_trajectory, parabola_max, sharp_bound

ROOT_TOL = 1e-12
ROOT_MAXITER = 200


class DomainError(ValueError):
    pass


def theorem_threshold(k: int) -> float:
    """``1 - e^2/(k+1)^2``, the amplitude limit of the constant-input theorem."""
    return 1 - math.e**2 / (k + 1) ** 2


def classical_threshold(k: int) -> float:
    return 1 - 2 / k


def classical_criterion(f: FirFilter, amplitude: float) -> bool:
    """``||h||_1 + amplitude <= 2`` (with a rounding allowance of 1e-12)."""
    if amplitude < 0:
        raise DomainError("amplitude must be >= 0")
    return l1_norm(f) + amplitude <= 2 + 1e-12


class Gap(NamedTuple):
    M: float
    y_tilde: float
    g: float


def _check(k: int, y: float):
    if int(k) != k or k < 3:
        raise DomainError(f"k must be an integer >= 3, got {k!r}")
    if not (1 - 2 / k <= y < 1):
        raise DomainError(f"y={y} outside [1 - 2/k, 1) for k={k}")


def gap(k: int, y: float) -> Gap:
    """Envelope maximum ``M``, shifted level ``y~ = 1/k - 1 + M/k`` and
    gap ``g = y - y~``."""
    _check(k, y)
    M = parabola_max(y, k)
    y_tilde = 1 / k - 1 + M / k
    return Gap(M, y_tilde, y - y_tilde)


def gap_value(y: float, k: int) -> float:
    return gap(k, y).g


def y_star(k: int) -> float:
    """Unique zero of ``g(., k)`` on ``(1 - 2/k, 1)``, by bisection.

    Returns the left end of the final bracket, so ``g(y_star) >= 0``.
    """
    if int(k) != k or k < 3:
        raise DomainError("k must be an integer >= 3")
    lo = 1 - 2 / k + 1e-9
    hi = 1 - 1e-9
    glo, ghi = gap_value(lo, k), gap_value(hi, k)
    if not (glo > 0 > ghi):
        raise RuntimeError(f"no sign change of the gap function for k={k}: g={glo}, {ghi}")
    for _ in range(ROOT_MAXITER):
        if hi - lo <= ROOT_TOL:
            break
        mid = 0.5 * (lo + hi)
        if gap_value(mid, k) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def stabilizing_check(k: int, y: float) -> bool:
    """``-(k+1)/k - M(y,k)/k + y + 1 >= -1``; equivalent to ``g(y, k) >= 0``."""
    M, _, g = gap(k, y)
    lhs = -(k + 1) / k - M / k + y + 1
    ok = lhs >= -1
    assert ok == (g >= 0) or abs(g) < 1e-12, (k, y, lhs, g)
    return ok


def constant_input_bound(k: int, y: float, sharp: bool = False) -> float:
    """Upper bound on the states for constant input ``y`` and any initial
    history in ``[-1, 1]^{k+1}``; the lower bound is always -1.

    ``sharp=True`` admits ``y`` up to ``y_star(k)`` and returns the
    critical-trajectory peak instead of the parabola vertex.
    """
    if int(k) != k or k < 3:
        raise DomainError("k must be an integer >= 3")
    if not y > 0:
        raise DomainError("y must be > 0")
    limit = y_star(k) if sharp else theorem_threshold(k)
    if y > limit:
        raise DomainError(f"y={y} exceeds the admissible amplitude {limit} for k={k}")
    if y <= 1 - 2 / k:
        return 1.0
    return sharp_bound(k, y) if sharp else parabola_max(y, k)


def _check_lambda(k: int, f_inf: float):
    if int(k) != k or k < 3:
        raise DomainError("k must be an integer >= 3")
    if not (0 < f_inf < theorem_threshold(k)):
        raise DomainError(f"f_inf={f_inf} outside (0, 1 - e^2/(k+1)^2) for k={k}")


def lambda0(k: int, f_inf: float) -> float:
    """Closed-form oversampling threshold for bandlimited inputs."""
    _check_lambda(k, f_inf)
    return 16 * math.e * f_inf / (k * (1 - f_inf) * (theorem_threshold(k) - f_inf))


def prop_threshold(k: int, f_inf: float, lipschitz: Optional[float] = None) -> float:
    """``L (N + k + 1) / g(f_inf)`` with ``N`` the critical excursion length.

    ``lipschitz`` defaults to ``f_inf``. Returns 0 when ``f_inf <= 1 - 2/k``
    (no oversampling requirement).
    """
    if int(k) != k or k < 3:
        raise DomainError("k must be an integer >= 3")
    if not (0 < f_inf < 1):
        raise DomainError("f_inf must lie in (0, 1)")
    if f_inf <= 1 - 2 / k:
        return 0.0
    g = gap_value(f_inf, k)
    if g <= 0:
        raise DomainError(f"f_inf={f_inf} is not below y_star({k}); no threshold exists")
    L = f_inf if lipschitz is None else lipschitz
    N = critical_trajectory(k, f_inf).coverage
    return L * (N + k + 1) / g


def amplitude_bound(k: int, f_inf: float) -> float:
    """State bound for signals of sup-norm ``f_inf`` sampled at ``lambda >= lambda0``."""
    if f_inf <= 1 - 2 / k:
        return 1.0
    return parabola_max(f_inf, k)


@dataclass(frozen=True)
class StabilityReport:
    k: int
    y: float
    M: float
    M_sharp: float
    y_tilde: float
    gap: float
    y_star: float
    lambda0: Optional[float]
    classical_ok: bool
    regime: str

    def to_dict(self) -> dict:
        return asdict(self)


def stability_report(k: int, y: float) -> StabilityReport:
    if int(k) != k or k < 3:
        raise DomainError("k must be an integer >= 3")
    if not (0 <= y < 1):
        raise DomainError("amplitude must lie in [0, 1)")
    ys = y_star(k)
    if y <= 1 - 2 / k:
        M = M_sharp = 1.0
        regime = "classical"
    else:
        M = parabola_max(y, k)
        M_sharp = sharp_bound(k, y)
        regime = "gap-stable" if y <= ys else "unstable-region"
    y_tilde = 1 / k - 1 + M / k
    lam = lambda0(k, y) if 0 < y < theorem_threshold(k) else None
    return StabilityReport(
        k=k,
        y=y,
        M=M,
        M_sharp=M_sharp,
        y_tilde=y_tilde,
        gap=y - y_tilde,
        y_star=ys,
        lambda0=lam,
        classical_ok=classical_criterion(make_minimal_filter(k), y),
        regime=regime,
    )
