"""Causal FIR feedback filters for generalized 1-bit Sigma-Delta schemes.

A filter ``h`` is stored by its taps ``h_1 .. h_L``; the tap ``h_0 = 0`` is
implicit. The scheme has order ``r`` when ``delta_0 - h = Delta^r g`` for a
summable ``g``, which for FIR filters reduces to the moment conditions

    sum_{i=0}^{L} (delta_0(i) - h_i) i^j = 0,    j = 0 .. r-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MOMENT_TOL = 1e-12
G_ZERO_TOL = 1e-12


class FilterError(ValueError):
    """Raised for malformed filters or violated moment conditions."""


def _moment_residuals(taps: np.ndarray, r: int) -> np.ndarray:
    # d_i = delta_0(i) - h_i over i = 0..L
    d = np.concatenate(([1.0], -taps))
    idx = np.arange(d.size, dtype=float)
    res = np.empty(r)
    for j in range(r):
        # 0**0 == 1 so the j = 0 row is the plain sum
        res[j] = float(np.sum(d * idx**j))
    return res


@dataclass(frozen=True)
class FirFilter:
    """Feedback filter with taps ``h_1 .. h_L``.

    ``declared_order = 0`` skips the moment check. ``k`` is set for the
    minimal-support second-order family and is ``None`` otherwise.
    """

    taps: np.ndarray
    declared_order: int = 0
    k: Optional[int] = None
    _l1: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float, ndmin=1)
        if taps.ndim != 1 or taps.size < 1:
            raise FilterError("taps must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(taps)):
            raise FilterError("taps must be finite")
        if self.declared_order < 0:
            raise FilterError("declared_order must be non-negative")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "_l1", float(np.sum(np.abs(taps))))
        if self.declared_order > 0:
            ok, res = check_moment_conditions(self, self.declared_order)
            if not ok:
                raise FilterError(
                    f"moment conditions of order {self.declared_order} fail: "
                    f"residuals {res.tolist()}"
                )

    @property
    def length(self) -> int:
        return int(self.taps.size)

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other):
        if not isinstance(other, FirFilter):
            return NotImplemented
        return (
            self.declared_order == other.declared_order
            and self.k == other.k
            and np.array_equal(self.taps, other.taps)
        )

    def __hash__(self):
        return hash((self.taps.tobytes(), self.declared_order, self.k))

    def to_dict(self) -> dict:
        return {"k": self.k, "taps": self.taps.tolist(), "order": self.declared_order}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "FirFilter":
        k = d.get("k")
        if k is not None and "taps" not in d:
            return make_minimal_filter(int(k))
        return cls(np.asarray(d["taps"], dtype=float), int(d.get("order", 0)), k)

    @classmethod
    def from_json(cls, s: str) -> "FirFilter":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class GSequence:
    """Finite prefix of ``g`` with ``delta_0 - h = Delta^r g``."""

    values: np.ndarray
    order: int

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)))

    @property
    def support(self) -> int:
        """Index one past the last entry above the zero threshold."""
        nz = np.nonzero(np.abs(self.values) > G_ZERO_TOL)[0]
        return int(nz[-1]) + 1 if nz.size else 0


def make_minimal_filter(k: int) -> FirFilter:
    """Minimal-support second-order filter ``((k+1)/k, 0, ..., 0, -1/k)``.

    >>> make_minimal_filter(1).taps.tolist()
    [2.0, -1.0]
    """
    if int(k) != k or k < 1:
        raise FilterError(f"k must be an integer >= 1, got {k!r}")
    k = int(k)
    taps = np.zeros(k + 1)
    taps[0] = (k + 1) / k
    taps[k] = -1.0 / k
    return FirFilter(taps, declared_order=2, k=k)


def l1_norm(f: FirFilter) -> float:
    return f._l1


def check_moment_conditions(f: FirFilter, r: int) -> tuple[bool, np.ndarray]:
    """Return ``(ok, residuals)`` for the order-``r`` moment conditions."""
    if r < 1:
        raise FilterError("r must be >= 1")
    res = _moment_residuals(np.asarray(f.taps, dtype=float), r)
    return bool(np.all(np.abs(res) < MOMENT_TOL)), res


def delta_power(x: np.ndarray, r: int) -> np.ndarray:
    """Backward difference ``Delta^r x`` with zeros before index 0."""
    out = np.asarray(x, dtype=float)
    for _ in range(r):
        out = np.diff(out, prepend=0.0)
    return out


def solve_g(f: FirFilter, r: int, horizon: Optional[int] = None) -> GSequence:
    """Recover ``g`` from ``delta_0 - h = Delta^r g`` by ``r`` cumulative sums."""
    ok, res = check_moment_conditions(f, r)
    if not ok:
        raise FilterError(
            f"filter does not satisfy order-{r} moment conditions "
            f"(residuals {res.tolist()}); g would not be summable"
        )
    if horizon is None:
        horizon = 4 * f.length
    n = max(horizon, f.length + 1)
    d = np.zeros(n)
    d[0] = 1.0
    d[1 : f.length + 1] -= f.taps
    g = d
    for _ in range(r):
        g = np.cumsum(g)
    # entries past the finite support are pure rounding noise
    g[f.length + 1 - r :][np.abs(g[f.length + 1 - r :]) < G_ZERO_TOL] = 0.0
    return GSequence(g[:horizon].copy(), r)
