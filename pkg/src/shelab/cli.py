"""Command-line entry point.

Every command reads an optional flat ``key = value`` config file, applies
flag overrides, validates everything before computing, writes its artifacts
atomically into ``--out`` and finishes with ``manifest.json``.

Exit codes: 0 on completion or a passed verdict, 2 on a failed statistical
verdict, 1 on any error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, SheLabError, UsageError
from .exponents import GammaCurve, estimate_gamma, pam_gamma, thresholds
from .harness import (GRID_PRESETS, WORKERS_ENV, EnsembleConfig, limit_diagnostics, resolve_workers,
                      run_ensemble)
from .localization import LocalizationSpec, coupling_error, localize, write_coupling_csv
from .solver import GridSpec, ModelSpec, generate_noise, solve_fd
from .windows import build_partition, refine_partition, window_length

__all__ = ["main", "parse_config", "run_command", "RunManifest", "COMMANDS"]


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    return tuple(float(p) for p in parts)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _opt_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


# key -> parser; every key is documented in README.md
KEY_TYPES = {
    "seed": _int, "replicas": _int, "first_stream": _int,
    "model": str, "kappa": float, "sigma_const": float,
    "grid": str, "dx": float, "dt": _opt_float, "half_width": _opt_float,
    "lam": _opt_float, "times": _floats, "half_lengths": _floats, "probes": _floats, "moments": _floats,
    "variance_source": str, "eps": float, "delta": float, "tail_start": _opt_float, "min_fraction": float,
    "final_bound": _opt_float, "band_lo": float, "band_hi": float, "z": float,
    "horizon": float, "stream": _int, "record": _floats,
    "c": _floats, "depth": _int, "kernel": str, "p": float, "t": _opt_float,
    "L": str, "L_block": str, "margin": str, "k": _int, "c0": _opt_float,
    "lip": _opt_float, "orders": _floats, "fit_lo": float, "fit_hi": float,
}

_MODEL_KEYS = {"model": "pam", "kappa": 1.0, "sigma_const": 1.0}
_GRID_KEYS = {"grid": "standard", "dx": float("nan"), "dt": None, "half_width": None}
_ENS_KEYS = {"seed": 0, "replicas": 2000, "first_stream": 0, **_MODEL_KEYS, **_GRID_KEYS}

COMMANDS = {
    "simulate": {"seed": 0, "stream": 0, **_MODEL_KEYS, "dx": 0.05, "dt": None, "horizon": 1.0,
                 "half_width": 5.0, "record": ()},
    "variance-check": {**_ENS_KEYS, "times": (1.0,), "half_lengths": (5.0, 20.0, 50.0), "band_lo": 0.9,
                       "band_hi": 1.1, "z": 1.96},
    "lyapunov": {**_ENS_KEYS, "replicas": 200, "times": (1.0, 2.0, 3.0, 4.0, 5.0, 6.0), "orders": (1.5, 2.0, 3.0),
                 "half_width": 20.0, "fit_lo": 2.0, "fit_hi": 6.0, "grid": "coarse"},
    "wlln": {**_ENS_KEYS, "replicas": 500, "grid": "coarse", "lam": 1.0, "times": (2.0, 4.0, 6.0, 8.0),
             "eps": 0.1, "final_bound": None, "z": 1.96},
    "slln": {**_ENS_KEYS, "replicas": 20, "grid": "desk", "lam": 2.5, "times": (4.0, 5.0, 6.0, 6.0625, 6.125),
             "delta": 0.1, "tail_start": 6.0, "min_fraction": 0.95},
    "clt": {**_ENS_KEYS, "grid": "desk", "lam": 1.5, "times": (4.0, 6.0, 8.0), "variance_source": "exact-oracle",
            "final_bound": None, "z": 1.96},
    "clt-fail": {**_ENS_KEYS, "lam": 0.2, "times": (4.0, 6.0, 8.0), "variance_source": "exact-oracle", "z": 1.96},
    "localize": {"seed": 0, "replicas": 50, "first_stream": 0, **_MODEL_KEYS, "dx": 0.05, "dt": None,
                 "horizon": 0.5, "half_width": 4.0, "c": (0.25, 0.5, 1.0, 2.0), "depth": 5, "kernel": "lattice",
                 "p": 2.0, "probes": (0.0,), "t": None},
    "partition": {"L": "", "L_block": "", "margin": "", "t": None, "k": 4, "c0": None},
    "thresholds": {**_MODEL_KEYS, "lip": None},
}


@dataclass
class RunManifest:
    """Completion marker recording what produced the artifacts in a directory."""

    command: str
    config: dict
    version: str
    seed: int | None
    started: str
    finished: str = ""
    files: dict = field(default_factory=dict)
    verdict: bool | None = None

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "version": self.version, "seed": self.seed,
                "started": self.started, "finished": self.finished, "files": self.files, "verdict": self.verdict}


def _read_flat(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for num, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def parse_config(command: str, path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, config file and overrides into typed parameters.

    Raises
    ------
    UsageError
        Unknown command or key, or a value that does not parse.
    """
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    params = dict(COMMANDS[command])
    raw = _read_flat(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for k, v in raw.items():
        if k not in params:
            raise UsageError(f"unknown key {k!r} for command {command!r}; allowed: {', '.join(sorted(params))}")
        try:
            params[k] = KEY_TYPES[k](v)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {k!r}: {exc}") from None
    return params


def _model(p: dict) -> ModelSpec:
    name = p["model"]
    if name == "pam":
        return ModelSpec.pam() if p["kappa"] == 1.0 else ModelSpec.scaled_pam(p["kappa"])
    if name == "scaled-pam":
        return ModelSpec.scaled_pam(p["kappa"])
    if name == "constant":
        return ModelSpec.constant(p["sigma_const"])
    if name == "zero":
        return ModelSpec.zero()
    raise ConfigurationError(f"unknown model {name!r}; choose pam, scaled-pam, constant or zero")


def _dx(p: dict) -> float:
    if not math.isnan(p["dx"]):
        return p["dx"]
    if p["grid"] not in GRID_PRESETS:
        raise ConfigurationError(f"unknown grid preset {p['grid']!r}; choose from {', '.join(GRID_PRESETS)}")
    return GRID_PRESETS[p["grid"]]


def _ensemble_config(p: dict, statistics, lam=None) -> EnsembleConfig:
    times = p["times"]
    if not times:
        raise ConfigurationError("times must not be empty")
    dx = _dx(p)
    dt = p["dt"] if p["dt"] is not None else dx * dx / 2.0
    horizon = max(times)
    reach = max([abs(x) for x in p.get("probes", ())] + list(p.get("half_lengths", ())) + [0.0])
    if lam is not None:
        reach = max(reach, float(window_length(lam, horizon)))
    if p["half_width"] is None:
        grid = GridSpec.padded(dx, horizon, reach, dt=dt)
    else:
        grid = GridSpec(dx, dt, p["half_width"], horizon)
    return EnsembleConfig(grid, _model(p), times, p["replicas"], seed=p["seed"], lam=lam,
                          half_lengths=p.get("half_lengths", ()), probes=p.get("probes", (0.0,)),
                          moments=p.get("moments", (2.0,)), statistics=statistics,
                          variance_source=p.get("variance_source", "exact-oracle"), first_stream=p["first_stream"])


class _Out:
    """Atomic writer collecting file digests."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict = {}

    def write(self, name: str, data) -> Path:
        if isinstance(data, str):
            data = data.encode()
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        dest = self.root / name
        os.replace(tmp, dest)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return dest

    def json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cmd_simulate(p, out: _Out, workers):
    dt = p["dt"] if p["dt"] is not None else p["dx"] ** 2 / 2.0
    grid = GridSpec(p["dx"], dt, p["half_width"], p["horizon"])
    model = _model(p)
    record = [grid.step_of(t) for t in p["record"]] if p["record"] else None
    f = solve_fd(grid, model, generate_noise(grid, p["seed"], p["stream"]), record=record)
    fd, tmp = tempfile.mkstemp(dir=out.root, suffix=".csv")
    os.close(fd)
    try:
        f.to_csv(tmp)
        out.write("field.csv", Path(tmp).read_bytes())
    finally:
        Path(tmp).unlink(missing_ok=True)
    summary = {"ncells": grid.ncells, "nsteps": grid.nsteps, "negative_count": int(f.negative_count),
               "digest": f.digest(), "min": float(f.values.min()), "max": float(f.values.max())}
    out.json("summary.json", summary)
    return None


def _ensemble_cmd(kind, p, out: _Out, workers):
    lam = p.get("lam")
    stats_ = {"wlln": ("window",), "slln": ("window",), "clt": ("window", "f"), "clt-fail": ("window", "f"),
              "variance-check": ("window",)}[kind]
    cfg = _ensemble_config(p, stats_, lam=lam)
    res = run_ensemble(cfg, workers)
    opts = {}
    if kind == "wlln":
        opts = {"eps": p["eps"], "final_bound": p["final_bound"], "z": p["z"]}
    elif kind == "slln":
        opts = {"delta": p["delta"], "tail_start": p["tail_start"], "min_fraction": p["min_fraction"]}
    elif kind in ("clt",):
        opts = {"final_bound": p["final_bound"], "z": p["z"]}
    elif kind == "clt-fail":
        opts = {"z": p["z"]}
    else:
        opts = {"band": (p["band_lo"], p["band_hi"]), "z": p["z"]}
    diag = "variance-ratio" if kind == "variance-check" else kind
    rep = limit_diagnostics(res, diag, **opts)
    out.write("ensemble.csv", res.summary_csv())
    out.write("replicas.csv", res.raw_csv())
    out.write(f"{diag}.csv", rep.to_csv())
    out.json("report.json", {"report": rep.to_dict(), "ensemble": res.to_dict()})
    return rep.passed


def _cmd_lyapunov(p, out: _Out, workers):
    orders = p["orders"]
    q = max(int(math.ceil(max(orders))), 1)
    cfg = _ensemble_config(p, ("mean",))
    cfg = EnsembleConfig(cfg.grid, cfg.model, cfg.times, cfg.replicas, seed=cfg.seed, probes=(0.0,),
                         statistics=("mean",), powers=q, first_stream=cfg.first_stream)
    res = run_ensemble(cfg, workers)
    # spatial power sums give integer orders; fractional orders use the probe values
    rows, fits = [], []
    for order in orders:
        series = []
        for k, t in enumerate(cfg.times):
            if float(order).is_integer():
                v = res.power_means[:, k, int(order) - 1]
            else:
                v = np.abs(res.probe_values[:, k, 0]) ** order
            m, s = float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
            series.append((t, m, s))
            rows.append(f"{t!r},{order!r},{m!r},{s!r}")
        est = estimate_gamma(series, order, (p["fit_lo"], p["fit_hi"]))
        ref = float(pam_gamma(order, cfg.model.kappa)) if cfg.model.kind in ("pam", "scaled-pam") else None
        fits.append({"p": order, "slope": est.slope, "ci": [est.ci_lo, est.ci_hi], "secant": est.secant,
                     "reference": ref})
    out.write("moments.csv", "t,p,moment,se\n" + "\n".join(rows) + "\n")
    out.json("lyapunov.json", {"fits": fits, "config": cfg.to_dict()})
    return None


def _cmd_localize(p, out: _Out, workers):
    dt = p["dt"] if p["dt"] is not None else p["dx"] ** 2 / 2.0
    grid = GridSpec(p["dx"], dt, p["half_width"], p["horizon"])
    model = _model(p)
    t = grid.horizon if p["t"] is None else p["t"]
    reports = []
    streams = range(p["first_stream"], p["first_stream"] + p["replicas"])
    noises = [generate_noise(grid, p["seed"], s) for s in streams]
    full = [solve_fd(grid, model, nz) for nz in noises]
    for c in p["c"]:
        spec = LocalizationSpec(c, p["depth"])
        loc = [localize(nz, model, grid, spec, kernel=p["kernel"]) for nz in noises]
        reports.append(coupling_error(full, loc, p["p"], p["probes"], t))
    fd, tmp = tempfile.mkstemp(dir=out.root, suffix=".csv")
    os.close(fd)
    try:
        write_coupling_csv(reports, tmp)
        out.write("coupling.csv", Path(tmp).read_bytes())
    finally:
        Path(tmp).unlink(missing_ok=True)
    return None


def _cmd_partition(p, out: _Out, workers):
    if not p["L"] or not p["L_block"]:
        raise UsageError("partition needs L and L_block")
    layout = build_partition(Fraction(p["L"]), Fraction(p["L_block"]))
    if p["margin"]:
        layout = refine_partition(layout, margin=Fraction(p["margin"]))
    elif p["t"] is not None and p["c0"] is not None:
        layout = refine_partition(layout, p["t"], p["k"], p["c0"])
    out.write("partition.json", layout.to_json() + "\n")
    return None


def _cmd_thresholds(p, out: _Out, workers):
    model = _model(p)
    if model.kind not in ("pam", "scaled-pam"):
        raise ConfigurationError("thresholds need an exponent curve; only the linear models have one built in")
    lip = model.lip if p["lip"] is None else p["lip"]
    rep = thresholds(GammaCurve.pam(model.kappa), lip)
    out.write("thresholds.json", rep.to_json() + "\n")
    return None


_RUNNERS = {
    "simulate": _cmd_simulate,
    "lyapunov": _cmd_lyapunov,
    "localize": _cmd_localize,
    "partition": _cmd_partition,
    "thresholds": _cmd_thresholds,
}


def run_command(command: str, params: dict, out_dir, workers=None) -> int:
    """Run one command and write its artifacts; returns the exit status."""
    workers = resolve_workers(workers)
    out = _Out(Path(out_dir))
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    if command in _RUNNERS:
        verdict = _RUNNERS[command](params, out, workers)
    else:
        verdict = _ensemble_cmd(command, params, out, workers)
    echo = {k: list(v) if isinstance(v, tuple) else (None if isinstance(v, float) and math.isnan(v) else v)
            for k, v in sorted(params.items())}
    man = RunManifest(command, echo, __version__, params.get("seed"), started,
                      _dt.datetime.now(_dt.timezone.utc).isoformat(), dict(sorted(out.files.items())), verdict)
    out.json("manifest.json", man.to_dict())
    return 2 if verdict is False else 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shelab", description="Stochastic heat equation averaging laboratory.")
    ap.add_argument("--version", action="version", version=f"shelab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="base seed (default 0)")
        sp.add_argument("--replicas", type=int, help="replica count")
        sp.add_argument("--out", default=f"shelab-{name}", help="output directory")
        sp.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        over = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            over[k.strip()] = v.strip()
        if args.seed is not None:
            over["seed"] = args.seed
        if args.replicas is not None:
            over["replicas"] = args.replicas
        params = parse_config(args.command, args.config, over)
        status = run_command(args.command, params, args.out, args.workers)
    except (SheLabError, ValueError, OSError) as exc:
        print(f"shelab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if status == 2:
        print(f"shelab {args.command}: statistical verdict failed (see {args.out})", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
