"""Configuration-driven experiment runner.

A config is a YAML mapping::

    grid: {fine_level: 6, coarse_level: 3}
    method: melod            # fem | lod | melod
    k: 2
    tau: 0.02
    n_steps: 10
    seed: 0
    coefficients:
      lambda: {type: periodic, contrast: 1000}
      mu: {type: periodic, contrast: 1000}
      kappa: {type: periodic, contrast: 1000}
      alpha: {type: periodic, background: 0.1, contrast: 1000}
    sources: test2           # or {fx: "0", fy: "0", g: "10", theta0: "x*(1-x)"}
    sweep:                   # optional: one run per entry, merged over the base
      - {method: lod, k: 2}
      - {method: melod, k: 2}

Unknown keys are rejected and every validation error carries the line number.
"""
from __future__ import annotations

import argparse
import copy
import logging
import sys
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import coeffs as C
from .assembly import assemble_block_system
from .fem_reference import run, write_trajectory_csv
from .grid import build_nested_grid
from .metrics import ErrorReport, energy_errors, write_errors_csv
from .mslod import METHODS, NORMALIZATIONS, build_basis, parallel_map
from .msstepper import run_multiscale
from .problems import PRESET_SOURCES, sources_from_expressions

log = logging.getLogger(__name__)

ALL_METHODS = ("fem",) + METHODS

# coefficient targets for the log-Gaussian presets: field means of lambda, mu, kappa, alpha
GP_TARGETS = {"lambda": 1.0, "mu": 1.0, "kappa": 1.0, "alpha": 0.1}

TEST3_K = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- YAML with lines

def _load_yaml(text: str, source: str = "<config>"):
    """Parse YAML into plain data plus a ``{path: line}`` map (1-based lines)."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    lines = {}
    if node is None:
        return {}, lines

    loader = yaml.SafeLoader("")

    def walk(n, path):
        lines.setdefault(path, n.start_mark.line + 1)
        if isinstance(n, yaml.MappingNode):
            out = {}
            for kn, vn in n.value:
                key = loader.construct_object(kn)
                if key in out:
                    raise ConfigError(f"{source}:{kn.start_mark.line + 1}: duplicate key {key!r}")
                lines[path + (key,)] = kn.start_mark.line + 1
                out[key] = walk(vn, path + (key,))
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(v, path + (i,)) for i, v in enumerate(n.value)]
        return loader.construct_object(n)

    return walk(node, ()), lines


class _Ctx:
    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def line(self, path) -> str:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return str(self.lines.get(path, "?"))

    def fail(self, path, msg):
        where = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{self.source}:{self.line(path)}: {where}: {msg}")


def _check_keys(ctx: _Ctx, data, allowed, path):
    if not isinstance(data, dict):
        ctx.fail(path, f"expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            ctx.fail(tuple(path) + (key,), f"unknown key {key!r}; allowed: {sorted(allowed)}")


def _num(ctx, data, key, path, default, kind=float, lo=None, hi=None, lo_open=False):
    if key not in data:
        return default
    v = data[key]
    p = tuple(path) + (key,)
    if isinstance(v, str):
        # YAML 1.1 reads 1e3 (no dot) as a string
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(p, f"expected a number, got {v!r}")
    if kind is int and (not float(v).is_integer()):
        ctx.fail(p, f"expected an integer, got {v!r}")
    v = kind(v)
    if lo is not None and (v <= lo if lo_open else v < lo):
        ctx.fail(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        ctx.fail(p, f"must be <= {hi}, got {v}")
    return v


# ---------------------------------------------------------------- schema

_FIELD_KEYS = {
    "log_gaussian": ("sigma2", "ell", "b0", "seed", "mean"),
    "periodic": ("cells_per_side", "inclusion_fraction", "background", "contrast"),
    "high_contrast": ("pattern_seed", "contrast", "background"),
    "constant": ("value",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    fine_level: int = 6
    coarse_level: int = 3
    method: str = "melod"
    k: int = 2
    gamma1: float = 1.0
    gamma2: float = 1.0
    normalization: str = "delta"
    tau: float = 0.02
    n_steps: int = 10
    seed: int = 0
    coefficients: dict = field(default_factory=dict)
    sources: object = "test1"
    label: str = ""
    write_trajectories: bool = True


def _field_spec(ctx, raw, name, idx, seed, path):
    _check_keys(ctx, raw, ("type",) + tuple(set().union(*_FIELD_KEYS.values())), path)
    kind = raw.get("type")
    if kind not in _FIELD_KEYS:
        ctx.fail(tuple(path) + ("type",), f"type must be one of {sorted(_FIELD_KEYS)}, got {kind!r}")
    _check_keys(ctx, raw, ("type",) + _FIELD_KEYS[kind], path)
    try:
        if kind == "log_gaussian":
            sigma2 = _num(ctx, raw, "sigma2", path, 1.0, lo=0.0)
            if "b0" in raw and "mean" in raw:
                ctx.fail(path, "give either b0 or mean, not both")
            mean = _num(ctx, raw, "mean", path, GP_TARGETS[name], lo=0.0, lo_open=True)
            b0 = _num(ctx, raw, "b0", path, float(np.log(mean) - sigma2 / 2))
            return C.LogGaussian(sigma2=sigma2, ell=_num(ctx, raw, "ell", path, 0.1, lo=0.0, lo_open=True),
                                 b0=b0, seed=_num(ctx, raw, "seed", path, seed + idx, kind=int, lo=0))
        if kind == "periodic":
            return C.Periodic(
                cells_per_side=_num(ctx, raw, "cells_per_side", path, 8, kind=int, lo=1),
                inclusion_fraction=_num(ctx, raw, "inclusion_fraction", path, 0.5),
                background=_num(ctx, raw, "background", path, 1.0, lo=0.0, lo_open=True),
                contrast=_num(ctx, raw, "contrast", path, 1e3, lo=1.0))
        if kind == "high_contrast":
            if "background" in raw:
                _num(ctx, raw, "background", path, 1.0, lo=1.0, hi=1.0)
            return C.HighContrast(pattern_seed=_num(ctx, raw, "pattern_seed", path, seed, kind=int, lo=0),
                                  contrast=_num(ctx, raw, "contrast", path, 1e3, lo=1.0))
        return C.Constant(value=_num(ctx, raw, "value", path, 1.0, lo=0.0, lo_open=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        ctx.fail(path, str(exc))


def _sources(ctx, raw, path):
    if isinstance(raw, str):
        if raw not in PRESET_SOURCES:
            ctx.fail(path, f"unknown source preset {raw!r}; choose from {sorted(PRESET_SOURCES)}")
        return raw
    _check_keys(ctx, raw, ("fx", "fy", "g", "theta0"), path)
    for key, v in raw.items():
        if not isinstance(v, (str, int, float)) or isinstance(v, bool):
            ctx.fail(tuple(path) + (key,), f"expected an expression string, got {v!r}")
    out = {key: str(raw.get(key, "0")) for key in ("fx", "fy", "g", "theta0")}
    try:
        sources_from_expressions(**out)
    except (SyntaxError, ValueError) as exc:
        ctx.fail(path, f"bad expression: {exc}")
    return out


_TOP_KEYS = ("grid", "method", "k", "gamma1", "gamma2", "normalization", "tau", "n_steps",
             "seed", "coefficients", "sources", "label", "write_trajectories")


def _parse_one(ctx: _Ctx, data: dict, path=()) -> ExperimentConfig:
    _check_keys(ctx, data, _TOP_KEYS, path)
    grid = data.get("grid", {})
    gpath = tuple(path) + ("grid",)
    _check_keys(ctx, grid, ("fine_level", "coarse_level"), gpath)
    fine = _num(ctx, grid, "fine_level", gpath, 6, kind=int, lo=1, hi=10)
    coarse = _num(ctx, grid, "coarse_level", gpath, 3, kind=int, lo=1, hi=10)
    if coarse > fine:
        ctx.fail(gpath + ("coarse_level",), f"coarse_level {coarse} exceeds fine_level {fine}")
    method = data.get("method", "melod")
    if method not in ALL_METHODS:
        ctx.fail(tuple(path) + ("method",), f"method must be one of {ALL_METHODS}, got {method!r}")
    norm = data.get("normalization", "delta")
    if norm not in NORMALIZATIONS:
        ctx.fail(tuple(path) + ("normalization",),
                 f"normalization must be one of {NORMALIZATIONS}, got {norm!r}")
    seed = _num(ctx, data, "seed", path, 0, kind=int, lo=0)
    cpath = tuple(path) + ("coefficients",)
    raw_coeffs = data.get("coefficients", {name: {"type": "log_gaussian"} for name in C.NAMES})
    _check_keys(ctx, raw_coeffs, C.NAMES, cpath)
    for name in C.NAMES:
        if name not in raw_coeffs:
            ctx.fail(cpath, f"missing coefficient {name!r}")
    specs = {name: _field_spec(ctx, raw_coeffs[name], name, i, seed, cpath + (name,))
             for i, name in enumerate(C.NAMES)}
    wt = data.get("write_trajectories", True)
    if not isinstance(wt, bool):
        ctx.fail(tuple(path) + ("write_trajectories",), f"expected true/false, got {wt!r}")
    label = data.get("label", "")
    if not isinstance(label, str):
        ctx.fail(tuple(path) + ("label",), f"expected a string, got {label!r}")
    return ExperimentConfig(
        fine_level=fine, coarse_level=coarse, method=method,
        k=_num(ctx, data, "k", path, 2, kind=int, lo=0),
        gamma1=_num(ctx, data, "gamma1", path, 1.0, lo=0.0, hi=1.0, lo_open=True),
        gamma2=_num(ctx, data, "gamma2", path, 1.0, lo=0.0, hi=1.0, lo_open=True),
        normalization=norm,
        tau=_num(ctx, data, "tau", path, 0.02, lo=0.0, lo_open=True),
        n_steps=_num(ctx, data, "n_steps", path, 10, kind=int, lo=0),
        seed=seed, coefficients=specs,
        sources=_sources(ctx, data.get("sources", "test1"), tuple(path) + ("sources",)),
        label=label, write_trajectories=wt)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, v in over.items():
        # a field override naming its type replaces the whole field spec
        if isinstance(v, dict) and isinstance(out.get(key), dict) and key != "sources" \
                and "type" not in v:
            out[key] = _merge(out[key], v)
        else:
            out[key] = copy.deepcopy(v)
    return out


def parse_config(text: str, source: str = "<config>") -> list:
    """Validate YAML text into a list of :class:`ExperimentConfig` (one per sweep entry)."""
    data, lines = _load_yaml(text, source)
    ctx = _Ctx(source, lines)
    if not isinstance(data, dict):
        ctx.fail((), "top level must be a mapping")
    sweep_entries = data.pop("sweep", None)
    if sweep_entries is None:
        return [_parse_one(ctx, data)]
    if not isinstance(sweep_entries, list):
        ctx.fail(("sweep",), "expected a list of override mappings")
    base_ctx_lines = dict(lines)
    out = []
    for i, entry in enumerate(sweep_entries):
        _check_keys(ctx, entry, _TOP_KEYS, ("sweep", i))
        merged = _merge(data, entry)
        # keys that came from the entry report the entry's line
        entry_lines = {k[2:]: v for k, v in base_ctx_lines.items()
                       if len(k) > 2 and k[:2] == ("sweep", i)}
        sub = _Ctx(source, {**base_ctx_lines, **entry_lines})
        out.append(_parse_one(sub, merged))
    return out


def load_config(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    return parse_config(text, str(path))


# ---------------------------------------------------------------- presets

def _uniform(spec_fn):
    return {name: spec_fn(i, name) for i, name in enumerate(C.NAMES)}


def preset_configs(name: str, paper_scale: bool = False, seed: int = 0,
                   normalization: str = "delta") -> list:
    """Expanded configuration lists for the three benchmark problems."""
    fine = 7 if paper_scale else 6
    base = dict(fine_level=fine, tau=0.02, n_steps=10, seed=seed, normalization=normalization)
    if name == "test1":
        specs = _uniform(lambda i, n: C.LogGaussian(
            1.0, 0.1, float(np.log(GP_TARGETS[n]) - 0.5), seed=seed + i))
        levels = [(2, 1), (3, 2), (4, 3)] + ([(5, 4)] if paper_scale else [])
        return [ExperimentConfig(coarse_level=cl, method="melod", k=k, coefficients=specs,
                                 sources="test1", label=f"H=2^-{cl}", **base)
                for cl, k in levels]
    if name == "test2":
        specs = _uniform(lambda i, n: C.Periodic(8, 0.5, 1.0, 1e3))
        ks = [2, 3, 4, 5] if paper_scale else [2, 3, 4]
        return [ExperimentConfig(coarse_level=fine - 3, method=m, k=k, coefficients=specs,
                                 sources="test2", **base)
                for m in ("melod", "lod") for k in ks]
    if name == "test3":
        exps = range(1, 9) if paper_scale else range(1, 7)
        out = []
        for e in exps:
            specs = _uniform(lambda i, n: C.HighContrast(seed, 10.0 ** e))
            out.extend(ExperimentConfig(coarse_level=fine - 3, method=m, k=TEST3_K,
                                        coefficients=specs, sources="test3", **base)
                       for m in ("melod", "lod"))
        return out
    raise ValueError(f"unknown preset {name!r}; choose from test1, test2, test3")


# ---------------------------------------------------------------- running

def _contrast(cf) -> float:
    return max(float(a.max() / a.min()) for a in cf.arrays() if a.min() > 0)


def _resolve_sources(cfg: ExperimentConfig):
    if isinstance(cfg.sources, str):
        return PRESET_SOURCES[cfg.sources]
    return sources_from_expressions(**cfg.sources)


def run_experiment(cfg: ExperimentConfig, outdir=None, workers: int = 1) -> ErrorReport:
    """Reference plus (optionally) multiscale run; writes CSV artifacts when ``outdir`` is set."""
    grid = build_nested_grid(cfg.fine_level, cfg.coarse_level)
    cf = C.build_field(grid, cfg.coefficients)
    bs = assemble_block_system(grid, cf)
    src = _resolve_sources(cfg)
    ref = run(grid, cf, src, cfg.tau, cfg.n_steps, bs=bs)
    if cfg.method == "fem":
        sol = ref
    else:
        basis = build_basis(grid, bs, cfg.method, cfg.k, cfg.gamma1, cfg.gamma2,
                            workers=workers, normalization=cfg.normalization)
        sol = run_multiscale(grid, bs, basis, src, cfg.tau, cfg.n_steps)
    meta = {"method": cfg.method, "k": cfg.k if cfg.method != "fem" else "",
            "contrast": f"{_contrast(cf):.6g}", "seed": cfg.seed}
    report = energy_errors(sol, ref, bs, meta=meta)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_errors_csv(outdir / "errors.csv", [report])
        C.write_fields_csv(outdir / "fields.csv", grid, cf)
        if cfg.write_trajectories:
            write_trajectory_csv(outdir / "trajectory", grid.fine, ref, prefix="fem")
            if cfg.method != "fem":
                write_trajectory_csv(outdir / "trajectory", grid.fine, sol, prefix=cfg.method)
    return report


@dataclass
class SweepResult:
    reports: list
    failures: list


_SWEEP = {}


def _sweep_init(outdir):
    _SWEEP["outdir"] = outdir


def _sweep_task(item):
    i, cfg = item
    outdir = _SWEEP.get("outdir")
    sub = None if outdir is None else Path(outdir) / f"run_{i:03d}"
    try:
        return i, run_experiment(cfg, sub), None
    except Exception as exc:  # isolate: one bad config must not sink the sweep
        msg = f"{type(exc).__name__}: {exc}"
        log.error("config %d failed: %s\n%s", i, msg, traceback.format_exc())
        return i, None, msg


def _failed_report(cfg: ExperimentConfig, msg: str) -> ErrorReport:
    nan = float("nan")
    contrast = ""
    vals = [getattr(s, "contrast", None) for s in cfg.coefficients.values()]
    vals = [v for v in vals if v is not None]
    if vals:
        contrast = f"{max(vals):.6g}"
    return ErrorReport(nan, nan, nan, nan, meta={"method": cfg.method, "k": cfg.k,
                                                 "contrast": contrast, "seed": cfg.seed,
                                                 "error": msg})


def sweep(configs, workers: int = 1, outdir=None) -> SweepResult:
    """Run independent configs in order; failures become ``nan`` rows and are listed."""
    configs = list(configs)
    results = parallel_map(_sweep_task, list(enumerate(configs)), workers,
                           initializer=_sweep_init, initargs=(outdir,))
    reports, failures = [], []
    for (i, rep, err), cfg in zip(sorted(results, key=lambda r: r[0]), configs):
        if err is not None:
            failures.append((i, err))
            rep = _failed_report(cfg, err)
        reports.append(rep)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        write_errors_csv(Path(outdir) / "errors.csv", reports)
    return SweepResult(reports, failures)


# ---------------------------------------------------------------- entry point

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="melod", description="Multiscale thermoelasticity experiments")
    ap.add_argument("config", nargs="?", help="YAML experiment config")
    ap.add_argument("--preset", choices=("test1", "test2", "test3"),
                    help="run a built-in benchmark instead of a config file")
    ap.add_argument("-o", "--output", default="melod_out", help="output directory")
    ap.add_argument("-w", "--workers", type=int, default=1, help="worker processes")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    ap.add_argument("--paper-scale", action="store_true",
                    help="presets at fine level 7 with the full k / contrast ranges")
    ap.add_argument("--seed", type=int, default=0, help="seed for presets")
    ap.add_argument("--normalization", choices=NORMALIZATIONS, default="delta",
                    help="basis constraint normalization for presets")
    args = ap.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if (args.config is None) == (args.preset is None):
        ap.error("give exactly one of CONFIG or --preset")
    try:
        if args.preset:
            configs = preset_configs(args.preset, args.paper_scale, args.seed, args.normalization)
        else:
            configs = load_config(args.config)
            if args.paper_scale:
                configs = [replace(c, fine_level=7) for c in configs]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if len(configs) == 1:
        try:
            rep = run_experiment(configs[0], args.output, workers=args.workers)
        except Exception as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        reports, failures = [rep], []
    else:
        res = sweep(configs, args.workers, args.output)
        reports, failures = res.reports, res.failures
    for rep in reports:
        print(",".join(str(v) for v in rep.row()))
    for i, msg in failures:
        print(f"config {i} failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
