"""Inputs that drive the minimal second-order scheme out of its stable range.

Two constructions: a two-level step whose level changes right after a
trajectory peak, and an online generator that flips the sign of the input
whenever an excursion reaches its extremum. A capped variant limits the
per-step input change, which is the mechanism that restores stability for
smooth, oversampled inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .filters import make_minimal_filter
from .quantizer import GREEDY, QuantizerTrace, _nonzero_taps, run
from .stability import gap_value
from .trajectory import coverage_upper_bound, critical_trigger

DETECTIONS = ("lookahead", "lagged")


@dataclass(frozen=True)
class AdversarySpec:
    """``mode`` is ``fixed_step`` (params ``change_index``, ``new_level``) or
    ``peak_flip`` (params ``horizon``, optional ``cap``, ``detection``)."""

    amplitude: float
    k: int
    mode: str
    params: dict = field(default_factory=dict)
    init: Optional[tuple] = None

    def __post_init__(self):
        if not abs(self.amplitude) < 1:
            raise ValueError("|amplitude| must be < 1")
        if self.mode not in ("fixed_step", "peak_flip"):
            raise ValueError(f"unknown adversary mode {self.mode!r}")
        if self.init is not None and len(self.init) != self.k + 1:
            raise ValueError("init must have k + 1 entries")

    def build(self):
        p = self.params
        if self.mode == "fixed_step":
            tr = step_counterexample(
                self.k, self.amplitude, float(p["new_level"]), int(p.get("change_index", 6)),
                self.init, int(p.get("horizon", 10_000)),
            )
            return tr.y, tr
        cap = p.get("cap")
        if cap == "auto":
            cap = smoothness_cap(self.k, self.amplitude)
        return peak_flip_generator(
            self.k, self.amplitude, int(p.get("horizon", 10_000)), self.init,
            detection=p.get("detection", "lookahead"), cap=cap,
        )


def _init(k: int, init) -> np.ndarray:
    return critical_trigger(k) if init is None else np.asarray(init, dtype=float)


def step_counterexample(
    k: int,
    hi: float,
    lo: float,
    change_index: int = 6,
    init: Optional[Sequence[float]] = None,
    horizon: int = 10_000,
) -> QuantizerTrace:
    """Greedy run on ``y_n = hi`` for ``n < change_index`` and ``lo`` afterwards.

    ``init`` defaults to the critical trigger.
    """
    if not (1 - 2 / k < hi < 1):
        raise ValueError("hi must lie in (1 - 2/k, 1)")
    if horizon <= change_index:
        raise ValueError("horizon must extend past change_index")
    y = np.full(horizon, float(hi))
    y[change_index:] = lo
    return run(make_minimal_filter(k), y, _init(k, init))


def smoothness_cap(k: int, amplitude: float) -> float:
    """Per-step change limit ``g(A, k) / (N_bound + k + 1)``.

    ``N_bound`` is the simplified coverage bound. Below ``1 - 2/k`` any
    input is safe and the cap is infinite.
    """
    if amplitude <= 1 - 2 / k:
        return math.inf
    g = gap_value(amplitude, k)
    if g <= 0:
        raise ValueError("amplitude beyond y_star(k): the gap is not positive")
    return g / (coverage_upper_bound(k, amplitude).simple + k + 1)


def peak_flip_generator(
    k: int,
    amplitude: float,
    horizon: int,
    init: Optional[Sequence[float]] = None,
    detection: str = "lookahead",
    cap: Optional[float] = None,
) -> tuple[np.ndarray, QuantizerTrace]:
    """Online sign-flipping input coupled to the greedy quantizer.

    The target level is ``+amplitude`` until an excursion above 1 peaks, then
    ``-amplitude`` until an excursion below -1 bottoms out, and so on.

    ``detection="lookahead"`` predicts ``v_{n+1}`` under the current input and
    flips when the excursion would turn back, so the new level applies from
    the sample right after the peak. ``"lagged"`` flips after the first
    observed strict decrease (one sample later). Ties never flip.

    ``cap`` limits ``|y_{n+1} - y_n|``; the input then moves toward the target.
    """
    if not 0 < amplitude < 1:
        raise ValueError("amplitude must lie in (0, 1)")
    if detection not in DETECTIONS:
        raise ValueError(f"detection must be one of {DETECTIONS}")
    f = make_minimal_filter(k)
    L = f.length
    taps = _nonzero_taps(f)
    hist = [float(x) for x in _init(k, init)]
    if len(hist) != L:
        raise ValueError("init must have k + 1 entries")
    init_arr = np.array(hist)
    if cap is not None and not cap > 0:
        raise ValueError("cap must be > 0")
    step_cap = math.inf if cap is None else float(cap)
    s = 1.0
    yn = float(amplitude)
    ys = np.empty(horizon)
    qs = np.empty(horizon)
    vs = np.empty(horizon)
    for n in range(horizon):
        base = n + L
        acc = 0.0
        for i, h in taps:
            acc += h * hist[base - i]
        a = acc + yn
        q = 1.0 if a >= 0 else -1.0
        v = a - q
        hist.append(v)
        ys[n], qs[n], vs[n] = yn, q, v
        if detection == "lookahead":
            acc = 0.0
            for i, h in taps:
                acc += h * hist[base + 1 - i]
            a2 = acc + yn
            v2 = a2 - (1.0 if a2 >= 0 else -1.0)
            turn = (s > 0 and v > 1 and v2 < v) or (s < 0 and v < -1 and v2 > v)
        else:
            p = hist[base - 1]
            turn = (s > 0 and p > 1 and v < p) or (s < 0 and p < -1 and v > p)
        if turn:
            s = -s
        target = s * amplitude
        yn = yn + max(-step_cap, min(step_cap, target - yn))
    return ys, QuantizerTrace(ys, qs, vs, init_arr, f, GREEDY)


class Divergence(NamedTuple):
    status: str  # diverging | bounded | undecided
    window: int
    window_max: np.ndarray
    threshold: float


def default_window(k: int, amplitude: float) -> int:
    """Ten times the simplified coverage bound (at least ``k + 1``)."""
    return max(k + 1, int(math.ceil(10 * coverage_upper_bound(k, amplitude).simple)))


def divergence_detector(
    trace,
    threshold: float,
    window: Optional[int] = None,
    k: Optional[int] = None,
    amplitude: Optional[float] = None,
    min_run: int = 3,
) -> Divergence:
    """Classify a run from its windowed ``max |v|``.

    diverging: some run of ``min_run`` consecutive windows has strictly
    increasing maxima and ends above ``threshold``; bounded: ``max |v| <=
    threshold`` over the whole horizon; otherwise undecided. Horizons shorter
    than ``min_run`` windows are undecided.
    """
    if not threshold > 1:
        raise ValueError("threshold must be > 1")
    v = trace.v if isinstance(trace, QuantizerTrace) else np.asarray(trace, dtype=float)
    if window is None:
        if isinstance(trace, QuantizerTrace):
            k = trace.filter.k if k is None else k
            amplitude = float(np.max(np.abs(trace.y))) if amplitude is None else amplitude
        if k is None or amplitude is None:
            raise ValueError("window needs k and amplitude")
        window = default_window(k, amplitude)
    nw = v.size // window
    if nw < min_run:
        return Divergence("undecided", window, np.empty(0), threshold)
    wmax = np.abs(v[: nw * window]).reshape(nw, window).max(axis=1)
    rising = 1
    for j in range(1, nw):
        rising = rising + 1 if wmax[j] > wmax[j - 1] else 1
        if rising >= min_run and wmax[j] > threshold:
            return Divergence("diverging", window, wmax, threshold)
    if np.max(np.abs(v)) <= threshold:
        return Divergence("bounded", window, wmax, threshold)
    return Divergence("undecided", window, wmax, threshold)
