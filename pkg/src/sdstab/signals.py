"""Input signals, sampling and kernel reconstruction.

Bandlimited signals use the normalization where frequencies (in cycles per
unit time) lie in ``[-1/2, 1/2]``. Samples are ``y_n = f(t_start + n/lam)``
and the reconstruction from bits (or samples) ``q_n`` is

    f_q(t) = (1/lam) sum_n q_n phi(t - t_start - n/lam)

for a kernel ``phi`` whose transform is 1 on ``[-1/2, 1/2]`` and vanishes
outside ``[-margin/2, margin/2]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import fftconvolve
from scipy.special import erf

from . import _io

BAND_EDGE = 0.5
SUP_GRID = 1e-3

KINDS = ("constant", "step", "sinusoid", "sinc", "blsum", "samples_file")
_REQUIRED = {
    "constant": ("c",),
    "step": ("levels", "change_indices"),
    "sinusoid": ("A", "f0"),
    "sinc": ("A",),
    "blsum": ("components",),
    "samples_file": ("path",),
}
_DEFAULTS = {"sinusoid": {"phase": 0.0}, "sinc": {"scale": 1.0, "shift": 0.0}}


class SignalError(ValueError):
    pass


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class SignalSpec:
    """Input description. ``params`` depends on ``kind``:

    * constant: ``c``
    * step: ``levels`` and ``change_indices`` (first sample index of each new level)
    * sinusoid: ``A``, ``f0``, ``phase``; ``A sin(2 pi f0 t + phase)``
    * sinc: ``A``, ``scale``, ``shift``; ``A sinc((t - shift)/scale)`` with the
      normalized ``sinc(x) = sin(pi x)/(pi x)``
    * blsum: ``components``, a list of ``(A_j, f_j, phase_j)``;
      ``sum A_j cos(2 pi f_j t + phase_j)``
    * samples_file: ``path`` to a CSV (column ``y`` if present, else the first)

    ``strict`` enforces the bandlimit ``f <= 1/2``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    interval: tuple = (0.0, 1.0)
    strict: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SignalError(f"unknown signal kind {self.kind!r}")
        t0, t1 = (float(x) for x in self.interval)
        if not t1 >= t0:
            raise SignalError("interval must satisfy t_start <= t_end")
        object.__setattr__(self, "interval", (t0, t1))
        p = {**_DEFAULTS.get(self.kind, {}), **self.params}
        missing = [r for r in _REQUIRED[self.kind] if r not in p]
        if missing:
            raise SignalError(f"{self.kind} signal needs {', '.join(missing)}")
        for key in ("c", "A", "f0", "phase", "scale", "shift"):
            if key in p:
                p[key] = float(p[key])
        if self.kind == "blsum":
            p["components"] = [tuple(float(x) for x in c) for c in p.get("components", [])]
            if not p["components"]:
                raise SignalError("blsum needs at least one component")
        if self.strict:
            for fr in self.frequencies(p):
                if abs(fr) > BAND_EDGE:
                    raise SignalError(
                        f"frequency {fr} exceeds the bandlimit 1/2; rescale time or pass strict=False"
                    )
        if self.kind == "sinc" and float(p.get("scale", 1.0)) <= 0:
            raise SignalError("sinc scale must be > 0")
        if self.kind == "step":
            ci = [int(c) for c in p.get("change_indices", [])]
            if len(p.get("levels", [])) != len(ci) + 1:
                raise SignalError("step needs len(levels) == len(change_indices) + 1")
            if any(b <= a for a, b in zip(ci, ci[1:])):
                raise SignalError("change_indices must be increasing")
            p["change_indices"] = ci
            p["levels"] = [float(x) for x in p["levels"]]
        object.__setattr__(self, "params", p)

    # constructors
    @classmethod
    def constant(cls, c: float, interval=(0.0, 1.0)) -> "SignalSpec":
        return cls("constant", {"c": float(c)}, interval)

    @classmethod
    def step(cls, levels: Sequence[float], change_indices: Sequence[int], interval=(0.0, 1.0)) -> "SignalSpec":
        return cls("step", {"levels": list(levels), "change_indices": list(change_indices)}, interval)

    @classmethod
    def sinusoid(cls, A: float, f0: float, phase: float = 0.0, interval=(0.0, 1.0), strict: bool = True):
        return cls("sinusoid", {"A": float(A), "f0": float(f0), "phase": float(phase)}, interval, strict)

    @classmethod
    def sinc(cls, A: float, scale: float = 1.0, shift: float = 0.0, interval=(-3.0, 3.0)) -> "SignalSpec":
        return cls("sinc", {"A": float(A), "scale": float(scale), "shift": float(shift)}, interval)

    @classmethod
    def blsum(cls, components, interval=(0.0, 1.0)) -> "SignalSpec":
        return cls("blsum", {"components": list(components)}, interval)

    @classmethod
    def samples_file(cls, path) -> "SignalSpec":
        return cls("samples_file", {"path": str(path)}, (0.0, 0.0))

    def frequencies(self, p: Optional[dict] = None) -> list[float]:
        p = self.params if p is None else p
        if self.kind == "sinusoid":
            return [float(p["f0"])]
        if self.kind == "sinc":
            return [0.5 / float(p.get("scale", 1.0))]
        if self.kind == "blsum":
            return [c[1] for c in p["components"]]
        if self.kind == "constant":
            return [0.0]
        return []

    @property
    def continuous(self) -> bool:
        return self.kind not in ("step", "samples_file")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full(t.shape, p["c"])
        if self.kind == "sinusoid":
            return p["A"] * np.sin(2 * np.pi * p["f0"] * t + p["phase"])
        if self.kind == "sinc":
            return p["A"] * np.sinc((t - p["shift"]) / p["scale"])
        if self.kind == "blsum":
            out = np.zeros(t.shape)
            for A, fr, ph in p["components"]:
                out += A * np.cos(2 * np.pi * fr * t + ph)
            return out
        raise SignalError(f"{self.kind} signals are only defined on samples")

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.zeros(t.shape)
        if self.kind == "sinusoid":
            w = 2 * np.pi * p["f0"]
            return p["A"] * w * np.cos(w * t + p["phase"])
        if self.kind == "sinc":
            x = (t - p["shift"]) / p["scale"]
            with np.errstate(invalid="ignore", divide="ignore"):
                d = np.where(x == 0, 0.0, (np.cos(np.pi * x) - np.sinc(x)) / x)
            return p["A"] * d / p["scale"]
        if self.kind == "blsum":
            out = np.zeros(t.shape)
            for A, fr, ph in p["components"]:
                w = 2 * np.pi * fr
                out -= A * w * np.sin(w * t + ph)
            return out
        raise SignalError(f"{self.kind} signals have no derivative")

    def sup_norm(self, grid_step: float = SUP_GRID) -> float:
        """``max |f|`` over the interval: dense grid plus local refinement."""
        if not self.continuous:
            raise SignalError("sup_norm needs a continuous signal")
        t0, t1 = self.interval
        t = np.linspace(t0, t1, max(2, int(math.ceil((t1 - t0) / grid_step)) + 1))
        a = np.abs(self(t))
        best = float(a.max())
        # refine around the largest grid maxima
        for j in np.argsort(a)[-8:]:
            lo, hi = t[max(j - 1, 0)], t[min(j + 1, t.size - 1)]
            if hi <= lo:
                continue
            r = minimize_scalar(lambda s: -abs(float(self(s))), bounds=(lo, hi), method="bounded",
                                options={"xatol": 1e-12})
            best = max(best, -float(r.fun))
        return best

    def to_dict(self) -> dict:
        d = {"kind": self.kind, **self.params, "interval": list(self.interval)}
        if not self.strict:
            d["strict"] = False
        if self.kind == "blsum":
            d["components"] = [list(c) for c in self.params["components"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SignalSpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise SignalError("signal.kind is required") from None
        interval = tuple(d.pop("interval", (0.0, 1.0)))
        strict = bool(d.pop("strict", True))
        if kind == "samples_file":
            return cls.samples_file(d["path"])
        return cls(kind, d, interval, strict)


def random_blsum(
    rng: np.random.Generator,
    f_inf: float,
    n_components: int = 4,
    interval=(0.0, 1.0),
    f_max: float = BAND_EDGE,
) -> SignalSpec:
    """Random bandlimited sum rescaled so that its sup over ``interval`` is ``f_inf``."""
    amps = rng.uniform(0.2, 1.0, n_components)
    freqs = rng.uniform(0.0, f_max, n_components)
    phases = rng.uniform(0.0, 2 * np.pi, n_components)
    raw = SignalSpec.blsum(list(zip(amps, freqs, phases)), interval)
    scale = f_inf / raw.sup_norm()
    return SignalSpec.blsum(list(zip(amps * scale, freqs, phases)), interval)


def num_samples(interval, lam: float) -> int:
    t0, t1 = interval
    return int(math.floor((t1 - t0) * lam + 1e-9)) + 1


def sample_times(interval, lam: float) -> np.ndarray:
    return interval[0] + np.arange(num_samples(interval, lam)) / lam


def _read_samples(path) -> np.ndarray:
    cols = _io.read_csv_columns(path)
    if "y" in cols:
        return cols["y"]
    return next(iter(cols.values()))


def sample(spec: SignalSpec, lam: float) -> np.ndarray:
    """``y_n = f(t_start + n/lam)`` for ``n = 0 .. floor((t_end - t_start) lam)``."""
    if spec.kind == "samples_file":
        return _read_samples(spec.params["path"])
    if not lam > 1:
        raise SignalError("lambda must be > 1")
    if spec.kind == "step":
        n = np.arange(num_samples(spec.interval, lam))
        idx = np.searchsorted(spec.params["change_indices"], n, side="right")
        return np.asarray(spec.params["levels"])[idx]
    return spec(sample_times(spec.interval, lam))


def to_band(spec: SignalSpec, lam: float) -> tuple[SignalSpec, float]:
    """Rescale time so the highest frequency becomes 1/2.

    Returns ``(spec', lam')`` producing the same samples; ``lam'`` is the
    oversampling relative to the signal's actual bandwidth.
    """
    fmax = max((abs(f) for f in spec.frequencies()), default=0.0)
    if fmax <= BAND_EDGE or spec.kind not in ("sinusoid", "blsum"):
        return spec, lam
    s = fmax / BAND_EDGE
    p = dict(spec.params)
    if spec.kind == "sinusoid":
        p["f0"] = p["f0"] / s
    else:
        p["components"] = [(A, f / s, ph) for A, f, ph in p["components"]]
    t0, t1 = spec.interval
    return SignalSpec(spec.kind, p, (t0 * s, t1 * s)), lam / s


def bernstein_constant(spec: SignalSpec) -> float:
    """``2 pi f_max``: ``||f'|| <= 2 pi f_max ||f||`` for trigonometric sums."""
    return 2 * np.pi * max(abs(f) for f in spec.frequencies())


def bernstein_check(spec: SignalSpec, grid_step: float = SUP_GRID) -> tuple[float, float, float]:
    """``(max |f'|, max |f|, 2 pi f_max)`` on a dense grid over the interval."""
    t0, t1 = spec.interval
    t = np.linspace(t0, t1, max(2, int(math.ceil((t1 - t0) / grid_step)) + 1))
    return float(np.abs(spec.derivative(t)).max()), float(np.abs(spec(t)).max()), bernstein_constant(spec)


# ---------------------------------------------------------------- kernel

TRANSITIONS = ("raised_cosine", "gaussian")
GAUSS_WIDTHS = 13.0  # transition width in units of sigma


def _phi_hat(transition: str, margin: float) -> Callable:
    a, b = BAND_EDGE, margin / 2
    if transition == "raised_cosine":
        def fh(xi):
            x = np.abs(np.asarray(xi, dtype=float))
            mid = 0.5 * (1 + np.cos(np.pi * (x - a) / (b - a)))
            return np.where(x <= a, 1.0, np.where(x >= b, 0.0, mid))
    else:
        c, s = (a + b) / 2, (b - a) / GAUSS_WIDTHS

        def fh(xi):
            x = np.asarray(xi, dtype=float)
            return 0.5 * (erf((c - x) / (math.sqrt(2) * s)) + erf((c + x) / (math.sqrt(2) * s)))
    return fh


def _phi_closed(transition: str, margin: float) -> Callable:
    a, b = BAND_EDGE, margin / 2
    if transition == "raised_cosine":
        w = b - a
        t_sing = 1 / (2 * w)

        def phi(t):
            t = np.asarray(t, dtype=float)
            base = (a + b) * np.sinc((a + b) * t)
            den = 1 - (2 * w * t) ** 2
            sing = np.isclose(np.abs(t), t_sing, rtol=0, atol=1e-9)
            with np.errstate(invalid="ignore", divide="ignore"):
                val = base * np.cos(np.pi * w * t) / den
            return np.where(sing, base * np.pi / 4, val)
    else:
        c, s = (a + b) / 2, (b - a) / GAUSS_WIDTHS

        def phi(t):
            t = np.asarray(t, dtype=float)
            return 2 * c * np.sinc(2 * c * t) * np.exp(-2 * np.pi**2 * s**2 * t**2)
    return phi


def _default_radius(transition: str, margin: float) -> float:
    a, b = BAND_EDGE, margin / 2
    if transition == "gaussian":
        s = (b - a) / GAUSS_WIDTHS
        # exp(-2 pi^2 s^2 R^2) < exp(-49), below double precision relative to phi(0)
        return float(math.ceil(7 / (math.sqrt(2) * math.pi * s)) + 1)
    return 64.0


def inverse_ft(phi_hat: Callable, xi_max: float, t: np.ndarray, panels: Optional[int] = None) -> np.ndarray:
    """``2 int_0^xi_max phi_hat(xi) cos(2 pi xi t) dxi`` by panelled Gauss-Legendre."""
    t = np.asarray(t, dtype=float)
    tmax = float(np.max(np.abs(t))) if t.size else 0.0
    if panels is None:
        panels = max(16, int(math.ceil(4 * xi_max * tmax)) + 16)
    x, w = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(0.0, xi_max, panels + 1)
    half = np.diff(edges) / 2
    xi = (edges[:-1, None] + half[:, None] * (x[None, :] + 1)).ravel()
    wt = (half[:, None] * w[None, :]).ravel() * phi_hat(xi)
    out = np.empty(t.shape)
    flat = t.ravel()
    res = out.reshape(-1)
    chunk = max(1, 2_000_000 // xi.size)
    for i in range(0, flat.size, chunk):
        res[i : i + chunk] = 2 * np.cos(2 * np.pi * np.outer(flat[i : i + chunk], xi)) @ wt
    return out


@dataclass(frozen=True)
class ReconstructionKernel:
    """``phi`` on the grid ``t = -half_width .. half_width`` with step ``grid_step``.

    ``deriv_l1 = (||phi'||_L1, ||phi''||_L1)`` by finite differences and the
    trapezoid rule over the grid. ``radius`` is the truncation radius used by
    default when reconstructing.
    """

    margin: float
    transition: str
    grid_step: float
    half_width: float
    t: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    deriv_l1: tuple
    radius: float

    @property
    def phi_hat(self) -> Callable:
        return _phi_hat(self.transition, self.margin)

    def __call__(self, t) -> np.ndarray:
        return _phi_closed(self.transition, self.margin)(t)

    @property
    def phi2_l1(self) -> float:
        return self.deriv_l1[1]

    @property
    def stopband(self) -> float:
        return self.margin / 2

    def summary(self) -> dict:
        return {
            "margin": self.margin,
            "transition": self.transition,
            "grid_step": self.grid_step,
            "half_width": self.half_width,
            "phi1_l1": self.deriv_l1[0],
            "phi2_l1": self.deriv_l1[1],
            "radius": self.radius,
        }


def build_kernel(
    margin: float = 1.5,
    grid_step: Optional[float] = None,
    half_width: Optional[float] = None,
    transition: str = "raised_cosine",
) -> ReconstructionKernel:
    """Kernel with transform 1 on ``|xi| <= 1/2`` and 0 beyond ``margin/2``.

    ``transition`` is ``raised_cosine`` (compact transition, ``phi ~ t^-3``)
    or ``gaussian`` (erf transition of width 13 sigma, Gaussian time decay;
    the transform is within 1e-10 of 0/1 outside the transition band).
    Grid values come from a numerical inverse Fourier transform.
    """
    if not margin > 1:
        raise KernelError("margin must be > 1")
    if transition not in TRANSITIONS:
        raise KernelError(f"unknown transition {transition!r}")
    b = margin / 2
    if grid_step is None:
        grid_step = 1 / (16 * b)
    if grid_step > 1 / (4 * b):
        raise KernelError(f"grid_step {grid_step} too coarse for stopband {b}: need <= {1 / (4 * b)}")
    radius = _default_radius(transition, margin)
    if half_width is None:
        half_width = radius
    m = int(round(half_width / grid_step))
    t = np.arange(-m, m + 1) * grid_step
    fh = _phi_hat(transition, margin)
    # the erf transition has negligible mass past b + 2 sigma
    xi_max = b if transition == "raised_cosine" else b + 2 * (b - BAND_EDGE) / GAUSS_WIDTHS
    vals = inverse_ft(fh, xi_max, t)
    d1 = np.gradient(vals, grid_step)
    d2 = np.gradient(d1, grid_step)
    l1 = (float(np.trapezoid(np.abs(d1), dx=grid_step)), float(np.trapezoid(np.abs(d2), dx=grid_step)))
    return ReconstructionKernel(margin, transition, grid_step, m * grid_step, t, vals, l1, radius)


# ---------------------------------------------------------------- reconstruction


@dataclass
class Reconstruction:
    """Evaluator for ``f_q``; see :func:`reconstruct`."""

    values: np.ndarray
    lam: float
    kernel: ReconstructionKernel
    t_start: float = 0.0
    radius: Optional[float] = None
    outside: bool = False  # set when an evaluation left the interior

    def __post_init__(self):
        if self.radius is None:
            self.radius = self.kernel.radius

    @property
    def t_end(self) -> float:
        return self.t_start + (self.values.size - 1) / self.lam

    @property
    def interior(self) -> tuple[float, float]:
        return self.t_start + self.radius, self.t_end - self.radius

    def _flag(self, t: np.ndarray):
        lo, hi = self.interior
        if t.size and (t.min() < lo or t.max() > hi):
            self.outside = True
            warnings.warn("f_q evaluated outside the well-covered interior", RuntimeWarning, stacklevel=3)

    def __call__(self, t) -> np.ndarray:
        """Direct truncated sum over ``|t - t_n| <= radius``."""
        t = np.asarray(t, dtype=float)
        self._flag(t)
        phi = self.kernel
        out = np.empty(t.shape)
        flat = out.reshape(-1)
        span = int(math.ceil(self.radius * self.lam))
        N = self.values.size
        for j, tj in enumerate(t.ravel()):
            c = (tj - self.t_start) * self.lam
            lo = max(0, int(math.floor(c)) - span)
            hi = min(N, int(math.ceil(c)) + span + 1)
            if hi <= lo:
                flat[j] = 0.0
                continue
            n = np.arange(lo, hi)
            d = tj - self.t_start - n / self.lam
            keep = np.abs(d) <= self.radius
            flat[j] = np.dot(self.values[lo:hi][keep], phi(d[keep])) / self.lam
        return out

    def on_grid(self, upsample: int = 10, interior_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``f_q`` on ``t_start + j/(lam*upsample)`` by FFT convolution."""
        P = int(upsample)
        if P < 1:
            raise ValueError("upsample must be >= 1")
        step = 1 / (self.lam * P)
        R = int(math.ceil(self.radius * self.lam * P))
        stuffed = np.zeros(self.values.size * P - (P - 1))
        stuffed[::P] = self.values
        ker = self.kernel(np.arange(-R, R + 1) * step)
        full = fftconvolve(stuffed, ker, mode="full")[R : R + stuffed.size] / self.lam
        t = self.t_start + np.arange(stuffed.size) * step
        if interior_only:
            lo, hi = self.interior
            m = (t >= lo - 1e-12) & (t <= hi + 1e-12)
            return t[m], full[m]
        self._flag(t)
        return t, full


def reconstruct(
    values: Sequence[float],
    lam: float,
    kernel: ReconstructionKernel,
    t_start: float = 0.0,
    radius: Optional[float] = None,
) -> Reconstruction:
    """``f_q(t) = (1/lam) sum_n values_n phi(t - t_start - n/lam)``."""
    if kernel.margin > lam:
        raise ValueError(f"kernel margin {kernel.margin} exceeds lambda {lam}")
    return Reconstruction(np.asarray(values, dtype=float), float(lam), kernel, float(t_start), radius)


def sup_error(spec: SignalSpec, rec: Reconstruction, interior=None, grid_step: Optional[float] = None) -> float:
    """``max |f - f_q|`` over ``interior`` on a grid of step ``<= grid_step``."""
    if grid_step is None:
        grid_step = 1 / (10 * rec.lam)
    if grid_step > 1 / (10 * rec.lam) + 1e-15:
        raise ValueError("grid_step must be <= 1/(10 lambda)")
    P = int(math.ceil(1 / (rec.lam * grid_step) - 1e-9))
    t, fq = rec.on_grid(P)
    if interior is not None:
        m = (t >= interior[0]) & (t <= interior[1])
        t, fq = t[m], fq[m]
    if t.size == 0:
        raise ValueError("empty interior: the sampled interval is shorter than twice the radius")
    return float(np.max(np.abs(spec(t) - fq)))


def error_bound(lam: float, kernel: ReconstructionKernel, v_inf: float, g_l1: float, r: int = 2) -> float:
    """``lam^-r ||phi^(r)||_L1 ||v||_inf ||g||_l1`` (``r = 2`` uses the grid estimate)."""
    if r != 2:
        raise ValueError("only the second derivative of the kernel is tabulated")
    return kernel.phi2_l1 * v_inf * g_l1 / lam**2


def export_reconstruction(path, t: np.ndarray, f: np.ndarray, fq: np.ndarray) -> None:
    _io.write_csv(Path(path), ["t", "f", "f_q", "error"], zip(t, f, fq, fq - f))
