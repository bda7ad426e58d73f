"""Generalized 1-bit Sigma-Delta recurrence.

For a feedback filter ``h`` of length ``L`` and input ``y``::

    a_n = sum_{i=1}^{L} h_i v_{n-i} + y_n
    q_n = rule(...)            # greedy: sign(a_n), sign(0) = +1
    v_n = a_n - q_n

The initial history ``v_{-L} .. v_{-1}`` is supplied oldest first.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import _io
from .filters import FirFilter, GSequence


class QuantizerError(ArithmeticError):
    """Non-finite input or state encountered during a run."""

    def __init__(self, msg: str, index: int):
        super().__init__(f"step {index}: {msg}")
        self.index = index


@dataclass(frozen=True)
class Greedy:
    name = "greedy"

    def to_dict(self) -> dict:
        return {"rule": "greedy"}


@dataclass(frozen=True)
class Yilmaz:
    """``q_n = sign(gamma u_{n-1} + u_{n-1} - u_{n-2})`` on the standard
    second-order scheme (filter ``(2, -1)``)."""

    gamma: float
    name = "yilmaz"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("yilmaz rule needs gamma > 0")

    def to_dict(self) -> dict:
        return {"rule": "yilmaz", "gamma": self.gamma}


@dataclass(frozen=True)
class External:
    """Bits taken from a fixed source instead of being chosen."""

    bits: np.ndarray = field(compare=False)
    name = "external"

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=float)
        if not np.all(np.abs(bits) == 1.0):
            raise ValueError("external bits must be +1 or -1")
        object.__setattr__(self, "bits", bits)

    def to_dict(self) -> dict:
        return {"rule": "external", "n_bits": int(self.bits.size)}


Rule = Union[Greedy, Yilmaz, External]
GREEDY = Greedy()


def parse_rule(spec) -> Rule:
    if spec is None or spec == "greedy":
        return GREEDY
    if isinstance(spec, (Greedy, Yilmaz, External)):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("rule", "greedy")
        if kind == "greedy":
            return GREEDY
        if kind == "yilmaz":
            return Yilmaz(float(spec["gamma"]))
        if kind == "external":
            return External(np.asarray(spec["bits"], dtype=float))
    raise ValueError(f"unknown quantization rule {spec!r}")


def sign(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


def _nonzero_taps(f: FirFilter) -> list[tuple[int, float]]:
    # zero taps contribute exact zeros; skipping them keeps the ordered sum unchanged
    return [(i + 1, float(h)) for i, h in enumerate(f.taps) if h != 0.0]


def _check_yilmaz(f: FirFilter):
    if f.length != 2 or f.taps[0] != 2.0 or f.taps[1] != -1.0:
        raise ValueError("the Yilmaz rule runs on the standard second-order filter (2, -1)")


@dataclass(frozen=True)
class QuantizerState:
    """Last ``L`` states, oldest first, and the index of the next step."""

    history: tuple
    step: int = 0

    @classmethod
    def initial(cls, f: FirFilter, init: Optional[Sequence[float]] = None) -> "QuantizerState":
        if init is None:
            init = np.zeros(f.length)
        init = tuple(float(x) for x in init)
        if len(init) != f.length:
            raise ValueError(f"init must have length L={f.length}, got {len(init)}")
        return cls(init, 0)


def step(state: QuantizerState, f: FirFilter, y_n: float, rule: Rule = GREEDY):
    """Advance one sample. Returns ``(q_n, v_n, new_state)``."""
    n = state.step
    hist = state.history
    if len(hist) != f.length:
        raise ValueError("state history length does not match the filter")
    if not math.isfinite(y_n):
        raise QuantizerError(f"non-finite input {y_n!r}", n)
    if abs(y_n) > 1:
        warnings.warn(f"step {n}: |y| = {abs(y_n)} exceeds 1", RuntimeWarning, stacklevel=2)
    acc = 0.0
    for i, h in _nonzero_taps(f):
        acc += h * hist[-i]
    a = acc + y_n
    q = _choose_bit(rule, a, hist, n)
    v = a - q
    if not math.isfinite(v):
        raise QuantizerError("state became non-finite", n)
    return q, v, QuantizerState(hist[1:] + (v,), n + 1)


def _choose_bit(rule: Rule, a: float, hist, n: int) -> float:
    if isinstance(rule, Greedy):
        return 1.0 if a >= 0 else -1.0
    if isinstance(rule, Yilmaz):
        u1, u2 = hist[-1], hist[-2]
        return sign(rule.gamma * u1 + (u1 - u2))
    if isinstance(rule, External):
        if n >= rule.bits.size:
            raise QuantizerError("external bit source exhausted", n)
        return float(rule.bits[n])
    raise TypeError(f"unsupported rule {rule!r}")


class Excursion(NamedTuple):
    """Maximal run of states outside ``[-1, 1]``; ``end`` is inclusive."""

    start: int
    end: int
    side: int  # +1 above 1, -1 below -1

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class QuantizerTrace:
    y: np.ndarray
    q: np.ndarray
    v: np.ndarray
    init: np.ndarray
    filter: FirFilter
    rule: Rule = GREEDY

    def __len__(self) -> int:
        return int(self.v.size)

    @property
    def extended_states(self) -> np.ndarray:
        """``v_{-L} .. v_{T-1}``."""
        return np.concatenate((self.init, self.v))

    def metadata(self) -> dict:
        return {
            "filter": self.filter.to_dict(),
            "rule": self.rule.to_dict(),
            "init": self.init.tolist(),
            "n_samples": len(self),
        }

    def to_csv(self, path, comment: Optional[str] = None) -> None:
        rows = zip(range(len(self)), self.y, self.q.astype(int), self.v)
        _io.write_csv(path, ["n", "y", "q", "v"], rows, comment)

    def export(self, csv_path, json_path, extra: Optional[dict] = None, comment: Optional[str] = None) -> None:
        self.to_csv(csv_path, comment)
        meta = self.metadata()
        if extra:
            meta.update(extra)
        _io.write_json(json_path, meta)


def run(
    f: FirFilter,
    y: Sequence[float],
    init: Optional[Sequence[float]] = None,
    rule: Rule = GREEDY,
) -> QuantizerTrace:
    """Run the recurrence over ``y``. Same arithmetic as repeated :func:`step`."""
    rule = parse_rule(rule)
    if isinstance(rule, Yilmaz):
        _check_yilmaz(f)
    y = np.asarray(y, dtype=float)
    state = QuantizerState.initial(f, init)
    L = f.length
    taps = _nonzero_taps(f)
    hist = list(state.history)
    T = y.size
    q = np.empty(T)
    v = np.empty(T)
    if T and not np.all(np.isfinite(y)):
        bad = int(np.nonzero(~np.isfinite(y))[0][0])
        raise QuantizerError(f"non-finite input {y[bad]!r}", bad)
    if T and np.max(np.abs(y)) > 1:
        warnings.warn("input exceeds 1 in magnitude", RuntimeWarning, stacklevel=2)
    greedy = isinstance(rule, Greedy)
    yl = y.tolist()
    for n in range(T):
        base = n + L  # hist[base - i] is v_{n-i}
        acc = 0.0
        for i, h in taps:
            acc += h * hist[base - i]
        a = acc + yl[n]
        if greedy:
            qn = 1.0 if a >= 0 else -1.0
        else:
            qn = _choose_bit(rule, a, hist[base - L : base], n)
        vn = a - qn
        hist.append(vn)
        q[n] = qn
        v[n] = vn
    if T and not np.all(np.isfinite(v)):
        bad = int(np.nonzero(~np.isfinite(v))[0][0])
        raise QuantizerError("state became non-finite", bad)
    return QuantizerTrace(y, q, v, np.array(state.history), f, rule)


def run_batch(
    f: FirFilter,
    inits: np.ndarray,
    y: np.ndarray,
    keep_states: bool = True,
):
    """Greedy runs for many initial histories at once.

    ``inits`` has shape ``(B, L)``; ``y`` is ``(T,)`` (shared) or ``(B, T)``.
    With ``keep_states`` the result is ``(Q, V)`` of shape ``(B, T)``;
    otherwise ``(vmin, vmax)`` per run. Arithmetic matches :func:`run`.
    """
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    B, L = inits.shape
    if L != f.length:
        raise ValueError(f"inits must have L={f.length} columns")
    y = np.asarray(y, dtype=float)
    shared = y.ndim == 1
    T = y.shape[-1]
    if not shared and y.shape[0] != B:
        raise ValueError("y must be (T,) or (B, T)")
    taps = _nonzero_taps(f)
    ring = inits.copy()  # ring[:, (pos - i) % L] holds v_{n-i}
    pos = 0
    if keep_states:
        Q = np.empty((B, T))
        V = np.empty((B, T))
    else:
        vmin = np.full(B, np.inf)
        vmax = np.full(B, -np.inf)
    acc = np.empty(B)
    for n in range(T):
        acc.fill(0.0)
        for i, h in taps:
            acc += h * ring[:, (pos - i) % L]
        a = acc + (y[n] if shared else y[:, n])
        qn = np.where(a >= 0, 1.0, -1.0)
        vn = a - qn
        ring[:, pos % L] = vn
        pos += 1
        if keep_states:
            Q[:, n] = qn
            V[:, n] = vn
        else:
            np.minimum(vmin, vn, out=vmin)
            np.maximum(vmax, vn, out=vmax)
    if keep_states:
        return Q, V
    return vmin, vmax


def run_batch_constant(f: FirFilter, inits: np.ndarray, levels: np.ndarray, horizon: int):
    """Greedy runs with a constant input per row; returns ``(vmin, vmax)``.

    Avoids materializing a ``(B, T)`` input for long horizons.
    """
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    levels = np.broadcast_to(np.asarray(levels, dtype=float), (inits.shape[0],))
    return _batch_minmax(np.broadcast_to(f.taps, inits.shape), inits, lambda n: levels, horizon)


def run_batch_taps(taps: np.ndarray, inits: np.ndarray, y: np.ndarray):
    """Greedy runs where each row has its own filter (zero-padded to a common
    length). ``y`` is ``(B, T)``; returns ``(vmin, vmax)``.

    Padding taps are exact zeros, so each row's sum equals the ordered sum
    over its own taps.
    """
    taps = np.atleast_2d(np.asarray(taps, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return _batch_minmax(taps, inits, lambda n: y[:, n], y.shape[1])


def _batch_minmax(taps: np.ndarray, inits, y_at, T: int):
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    B, L = inits.shape
    if taps.shape != (B, L):
        raise ValueError("taps and inits must both be (B, L)")
    ring = inits.copy()
    cols = [i for i in range(1, L + 1) if np.any(taps[:, i - 1] != 0.0)]
    vmin = np.full(B, np.inf)
    vmax = np.full(B, -np.inf)
    acc = np.empty(B)
    for n in range(T):
        acc.fill(0.0)
        for i in cols:
            acc += taps[:, i - 1] * ring[:, (n - i) % L]
        a = acc + y_at(n)
        vn = a - np.where(a >= 0, 1.0, -1.0)
        ring[:, n % L] = vn
        np.minimum(vmin, vn, out=vmin)
        np.maximum(vmax, vn, out=vmax)
    return vmin, vmax


def max_abs_state(trace: QuantizerTrace) -> float:
    return float(np.max(np.abs(trace.v))) if len(trace) else 0.0


def excursions(trace_or_states) -> list[Excursion]:
    """Partition ``{n : |v_n| > 1}`` into maximal same-side runs."""
    v = trace_or_states.v if isinstance(trace_or_states, QuantizerTrace) else np.asarray(trace_or_states)
    side = np.where(v > 1, 1, np.where(v < -1, -1, 0))
    out = []
    n = 0
    T = side.size
    while n < T:
        s = side[n]
        if s == 0:
            n += 1
            continue
        start = n
        while n + 1 < T and side[n + 1] == s:
            n += 1
        out.append(Excursion(start, n, int(s)))
        n += 1
    return out


def state_u(trace: QuantizerTrace, g: GSequence) -> np.ndarray:
    """``u = v * g`` over indices ``-L .. T-1`` (states before ``-L`` are 0)."""
    ext = trace.extended_states
    return np.convolve(ext, g.values)[: ext.size]


def read_trace_csv(path) -> dict[str, np.ndarray]:
    return _io.read_csv_columns(path)
