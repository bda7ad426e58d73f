"""Command-line experiments.

Every command reads a JSON config (``--config`` takes a path or an inline
JSON object), writes its outputs atomically under ``--out`` and embeds the
config, seed and package version in each file (JSON field ``meta``, CSV
comment lines starting with ``#``).

Column orders:

  quantize        trace.csv        n, y, q, v
  analyze-filter  g.csv            i, g
                  coefficients.csv n, h1 .. h{k+1}   (minimal filters only)
  gap-report      gap_report.csv   k, y_star, lower_bound, g_classical, lambda0_at_half
                  gap_curve.csv    k, y, M, y_tilde, g
  sweep           sweep.csv        k, amplitude, lambda, runs, max_abs_v, min_v, max_v,
                                   M, lambda0, classical, violations
  adversary       adversary_free.csv, adversary_capped.csv   n, y, v
  reconstruct     reconstruction.csv t, f, f_q, error

Exit codes: 0 ok, 1 usage or config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, _io
from .adversary import AdversarySpec, divergence_detector, smoothness_cap
from .filters import FilterError, FirFilter, check_moment_conditions, l1_norm, make_minimal_filter, solve_g
from .quantizer import QuantizerError, excursions, parse_rule, run, run_batch
from .signals import (
    KernelError,
    SignalError,
    SignalSpec,
    build_kernel,
    error_bound,
    random_blsum,
    reconstruct,
    sample,
    to_band,
)
from .stability import (
    DomainError,
    classical_criterion,
    gap,
    lambda0,
    stability_report,
    theorem_threshold,
    y_star,
)
from .trajectory import coefficient_table, parabola_max

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"config.{path}: {msg}")
        self.path = path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config helpers


def _get(cfg: dict, key: str, default: Any = ..., path: str = "") -> Any:
    if key in cfg:
        return cfg[key]
    if default is ...:
        raise ConfigError(f"{path}{key}", "required field missing")
    return default


def _wrap(path: str, fn: Callable, *args, **kw):
    """Call ``fn`` and re-raise validation errors with the config field path."""
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(path, str(e)) from None


def _filter(cfg: dict) -> FirFilter:
    spec = _get(cfg, "filter", {"k": 3})
    if not isinstance(spec, dict):
        raise ConfigError("filter", "expected an object with 'k' or 'taps'")
    return _wrap("filter", FirFilter.from_dict, spec)


def _signal(cfg: dict) -> SignalSpec:
    d = _get(cfg, "signal")
    if not isinstance(d, dict):
        raise ConfigError("signal", "expected an object")
    return _wrap("signal", SignalSpec.from_dict, d)


def _int_list(cfg: dict, key: str, default=...) -> list[int]:
    v = _get(cfg, key, default)
    v = [v] if isinstance(v, (int, float)) else list(v)
    if any(int(x) != x for x in v):
        raise ConfigError(key, "expected integers")
    return [int(x) for x in v]


def _float_list(cfg: dict, key: str, default=...) -> list[float]:
    v = _get(cfg, key, default)
    v = [v] if isinstance(v, (int, float)) else list(v)
    return [float(x) for x in v]


class Context:
    def __init__(self, command: str, config: dict, out: Path, seed: int, threads: int):
        self.command = command
        self.config = config
        self.out = out
        self.seed = seed
        self.threads = threads

    @property
    def meta(self) -> dict:
        return {"command": self.command, "config": self.config, "seed": self.seed, "version": __version__}

    @property
    def comment(self) -> str:
        return f"sdstab {__version__} {self.command} seed={self.seed} config={json.dumps(self.config, sort_keys=True)}"

    def json(self, name: str, payload: dict) -> Path:
        return _io.write_json(self.out / name, {"meta": self.meta, **payload})

    def csv(self, name: str, header, rows) -> Path:
        return _io.write_csv(self.out / name, header, rows, self.comment)


def _map(ctx: Context, fn: Callable, items: list) -> list:
    if ctx.threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=ctx.threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- commands


def cmd_quantize(ctx: Context) -> int:
    cfg = ctx.config
    f = _filter(cfg)
    spec = _signal(cfg)
    lam = float(_get(cfg, "lambda", 100.0))
    if spec.kind != "samples_file" and _get(cfg, "rescale", False):
        spec, lam = to_band(spec, lam)
    y = _wrap("signal", sample, spec, lam)
    init = _get(cfg, "init", None)
    rule = _wrap("rule", parse_rule, _get(cfg, "rule", "greedy"))
    tr = _wrap("init", run, f, y, init, rule)
    exc = excursions(tr)
    amp = float(np.max(np.abs(y))) if y.size else 0.0
    summary = {
        "n_samples": int(y.size),
        "lambda": lam,
        "max_abs_v": float(np.max(np.abs(tr.v))) if y.size else 0.0,
        "max_v": float(tr.v.max()) if y.size else 0.0,
        "min_v": float(tr.v.min()) if y.size else 0.0,
        "amplitude": amp,
        "classical_ok": classical_criterion(f, amp),
        "excursions": [
            {
                "start": e.start,
                "end": e.end,
                "side": e.side,
                "peak": float(np.max(np.abs(tr.v[e.start : e.end + 1]))),
                "min_abs_y": float(np.min(np.abs(y[e.start : e.end + 1]))),
            }
            for e in exc
        ],
    }
    if f.k is not None and f.k >= 3 and 0 < amp < 1:
        summary["stability"] = stability_report(f.k, amp).to_dict()
    tr.to_csv(ctx.out / "trace.csv", ctx.comment)
    ctx.json("summary.json", {"filter": f.to_dict(), "rule": tr.rule.to_dict(), "summary": summary})
    return EXIT_OK


def cmd_analyze_filter(ctx: Context) -> int:
    cfg = ctx.config
    f = _filter(cfg)
    r = int(_get(cfg, "order", 2))
    ok, res = check_moment_conditions(f, r)
    report = {
        "filter": f.to_dict(),
        "l1": l1_norm(f),
        "classical_amplitude_limit": 2 - l1_norm(f),
        "order": r,
        "moment_conditions_ok": ok,
        "moment_residuals": res.tolist(),
    }
    if ok:
        g = solve_g(f, r, _get(cfg, "horizon", None))
        report.update(g=g.values.tolist(), g_l1=g.l1, g_support=g.support)
        ctx.csv("g.csv", ["i", "g"], enumerate(g.values))
    if f.k is not None:
        table = coefficient_table(f.k, int(_get(cfg, "n_max", 50)))
        header = ["n"] + [f"h{i}" for i in range(1, f.k + 2)]
        ctx.csv("coefficients.csv", header, ([n, *row] for n, row in enumerate(table.rows)))
    ctx.json("filter.json", report)
    return EXIT_OK


def cmd_gap_report(ctx: Context) -> int:
    cfg = ctx.config
    ks = _int_list(cfg, "k", list(range(3, 21)))
    if any(k < 3 for k in ks):
        raise ConfigError("k", "all k must be >= 3")
    npts = int(_get(cfg, "y_points", 200))
    nlam = int(_get(cfg, "lambda_points", 20))
    rows, curve, per_k = [], [], []
    for k in ks:
        ys = y_star(k)
        lb = theorem_threshold(k)
        g0 = gap(k, 1 - 2 / k).g
        lam_y = np.linspace(0, lb, nlam + 2)[1:-1]
        lam_curve = [[float(y), lambda0(k, float(y))] for y in lam_y]
        rows.append([k, ys, lb, g0, lambda0(k, 0.5) if 0.5 < lb else math.nan])
        per_k.append({"k": k, "y_star": ys, "lower_bound": lb, "g_classical": g0, "lambda0_curve": lam_curve})
        for y in np.linspace(1 - 2 / k, 1, npts, endpoint=False):
            M, yt, g = gap(k, float(y))
            curve.append([k, y, M, yt, g])
    ctx.csv("gap_report.csv", ["k", "y_star", "lower_bound", "g_classical", "lambda0_at_half"], rows)
    ctx.csv("gap_curve.csv", ["k", "y", "M", "y_tilde", "g"], curve)
    ctx.json("gap_report.json", {"rows": per_k})
    return EXIT_OK


def _bound_for(k: int, amp: float) -> float:
    if amp <= 1 - 2 / k:
        return 1.0
    if amp < 1:
        return parabola_max(amp, k)
    return math.inf


def _sweep_constant(cell) -> list:
    k, amp, _, horizon, n_runs, seed = cell
    rng = np.random.default_rng(seed)
    f = make_minimal_filter(k)
    inits = rng.uniform(-1, 1, (n_runs, k + 1))
    vmin, vmax = run_batch(f, inits, np.full(horizon, amp), keep_states=False)
    M = _bound_for(k, amp)
    viol = int(np.sum((vmin < -1) | (vmax > M)))
    lam0 = lambda0(k, amp) if 0 < amp < theorem_threshold(k) else math.nan
    return [k, amp, math.nan, n_runs, float(max(vmax.max(), -vmin.min())), float(vmin.min()),
            float(vmax.max()), M, lam0, classical_criterion(f, amp), viol]


def _sweep_bandlimited(cell) -> list:
    k, amp, lam, duration, n_runs, seed = cell
    rng = np.random.default_rng(seed)
    f = make_minimal_filter(k)
    M = _bound_for(k, amp)
    lo = hi = 0.0
    viol = 0
    for _ in range(n_runs):
        spec = random_blsum(rng, amp, 4, (0.0, duration))
        v = run(f, sample(spec, lam)).v
        lo, hi = min(lo, v.min()), max(hi, v.max())
        viol += int(np.max(np.abs(v)) > M)
    lam0 = lambda0(k, amp) if 0 < amp < theorem_threshold(k) else math.nan
    return [k, amp, lam, n_runs, float(max(hi, -lo)), float(lo), float(hi), M, lam0,
            classical_criterion(f, amp), viol]


SWEEP_HEADER = ["k", "amplitude", "lambda", "runs", "max_abs_v", "min_v", "max_v", "M", "lambda0",
                "classical", "violations"]


def cmd_sweep(ctx: Context) -> int:
    cfg = ctx.config
    family = _get(cfg, "family", "constant")
    ks = _int_list(cfg, "k", [])
    amps = _float_list(cfg, "amplitude", [])
    n_runs = int(_get(cfg, "runs", 20))
    if any(k < 3 for k in ks):
        raise ConfigError("k", "all k must be >= 3")
    if any(not 0 < a < 1 for a in amps):
        raise ConfigError("amplitude", "amplitudes must lie in (0, 1)")
    if family == "constant":
        horizon = int(_get(cfg, "horizon", 10_000))
        keys = sorted((k, a, math.nan) for k in ks for a in amps)
        cells = [(k, a, lam, horizon, n_runs, (ctx.seed, i)) for i, (k, a, lam) in enumerate(keys)]
        fn = _sweep_constant
    elif family == "bandlimited":
        lams = _float_list(cfg, "lambda", [])
        duration = float(_get(cfg, "duration", 20.0))
        keys = sorted((k, a, lam) for k in ks for a in amps for lam in lams)
        cells = [(k, a, lam, duration, n_runs, (ctx.seed, i)) for i, (k, a, lam) in enumerate(keys)]
        fn = _sweep_bandlimited
    else:
        raise ConfigError("family", f"expected 'constant' or 'bandlimited', got {family!r}")
    rows = _map(ctx, fn, cells)
    ctx.csv("sweep.csv", SWEEP_HEADER, rows)
    ctx.json("sweep.json", {"cells": len(rows), "violations": int(sum(r[-1] for r in rows))})
    return EXIT_OK


def cmd_adversary(ctx: Context) -> int:
    cfg = ctx.config
    k = int(_get(cfg, "k", 3))
    amp = float(_get(cfg, "amplitude", 0.7))
    mode = _get(cfg, "mode", "peak_flip")
    horizon = int(_get(cfg, "horizon", 10_000))
    init = _get(cfg, "init", None)
    threshold = float(_get(cfg, "threshold", _bound_for(k, amp)))
    if threshold <= 1:
        threshold = 1.0 + 1e-12
    if mode == "fixed_step":
        params = {"new_level": _get(cfg, "new_level"), "change_index": _get(cfg, "change_index", 6),
                  "horizon": horizon}
        spec = _wrap("mode", AdversarySpec, amp, k, mode, params, init)
        y, tr = _wrap("mode", spec.build)
        ctx.csv("adversary_step.csv", ["n", "y", "v"], zip(range(len(tr)), y, tr.v))
        viol = np.nonzero(tr.v < -1)[0]
        ctx.json("adversary.json", {"first_violation": int(viol[0]) if viol.size else None,
                                    "max_v": float(tr.v.max()), "min_v": float(tr.v.min())})
        return EXIT_OK
    detection = _get(cfg, "detection", "lookahead")
    out = {}
    for name, cap in (("free", None), ("capped", "auto")):
        spec = _wrap("mode", AdversarySpec, amp, k, "peak_flip",
                     {"horizon": horizon, "cap": cap, "detection": detection}, init)
        y, tr = _wrap("mode", spec.build)
        d = divergence_detector(tr, threshold, k=k, amplitude=amp)
        ctx.csv(f"adversary_{name}.csv", ["n", "y", "v"], zip(range(len(tr)), y, tr.v))
        out[name] = {"status": d.status, "window": d.window, "max_abs_v": float(np.max(np.abs(tr.v))),
                     "window_max": d.window_max.tolist()}
    out["cap"] = smoothness_cap(k, amp)
    out["threshold"] = threshold
    ctx.json("adversary.json", out)
    return EXIT_OK


def cmd_reconstruct(ctx: Context) -> int:
    cfg = ctx.config
    spec = _signal(cfg)
    if not spec.continuous:
        raise ConfigError("signal.kind", "reconstruction needs a continuous signal")
    f = _filter(cfg)
    lam = float(_get(cfg, "lambda", 500.0))
    kcfg = _get(cfg, "kernel", {})
    kernel = _wrap("kernel", build_kernel, float(kcfg.get("margin", 2.0)),
                   kcfg.get("grid_step"), kcfg.get("half_width"), kcfg.get("transition", "gaussian"))
    source = _get(cfg, "source", "bits")
    y = sample(spec, lam)
    t0 = spec.interval[0]
    if source == "bits":
        tr = run(f, y, _get(cfg, "init", None))
        vals = tr.q
    elif source == "samples":
        tr, vals = None, y
    else:
        raise ConfigError("source", "expected 'bits' or 'samples'")
    rec = _wrap("kernel", reconstruct, vals, lam, kernel, t0, _get(cfg, "radius", None))
    upsample = int(_get(cfg, "upsample", 10))
    t, fq = rec.on_grid(upsample)
    if t.size == 0:
        raise ConfigError("signal.interval", f"interval shorter than twice the kernel radius {rec.radius}")
    ft = spec(t)
    err = float(np.max(np.abs(ft - fq)))
    summary = {"lambda": lam, "kernel": kernel.summary(), "interior": list(rec.interior), "sup_error": err}
    if tr is not None:
        v_inf = float(np.max(np.abs(tr.v)))
        g = solve_g(f, 2)
        summary.update(max_abs_v=v_inf, g_l1=g.l1, error_bound=error_bound(lam, kernel, v_inf, g.l1))
    ctx.csv("reconstruction.csv", ["t", "f", "f_q", "error"], zip(t, ft, fq, fq - ft))
    ctx.json("reconstruction.json", summary)
    return EXIT_OK


COMMANDS = {
    "quantize": cmd_quantize,
    "analyze-filter": cmd_analyze_filter,
    "gap-report": cmd_gap_report,
    "sweep": cmd_sweep,
    "adversary": cmd_adversary,
    "reconstruct": cmd_reconstruct,
}


def _load_config(arg: str | None) -> dict:
    if arg is None:
        return {}
    text = arg if arg.lstrip().startswith("{") else Path(arg).read_text()
    cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise ConfigError("", "top level must be a JSON object")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdstab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file or inline JSON object")
        s.add_argument("--out", default="out", help="output directory (default: ./out)")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
    except (OSError, json.JSONDecodeError, ConfigError) as e:
        print(f"sdstab: bad config: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("sdstab: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    ctx = Context(args.command, cfg, Path(args.out), args.seed, args.threads)
    os.makedirs(ctx.out, exist_ok=True)
    try:
        return COMMANDS[args.command](ctx)
    except ConfigError as e:
        print(f"sdstab: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (QuantizerError, FloatingPointError, ArithmeticError, RuntimeError) as e:
        print(f"sdstab: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SignalError, KernelError, FilterError, DomainError) as e:
        print(f"sdstab: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
