"""Command-line front end.

Every subcommand resolves its configuration from built-in defaults, then
an optional YAML/JSON file, then ``--set key=value`` overrides, then the
dedicated flags, validates it, and writes CSV tables plus a
``manifest.json`` that echoes the resolved configuration.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    IncrementConfig,
    TruncationConfig,
    increment_study,
    solution_coefficients,
    truncation_study,
    write_manifest,
    write_spectrum_csv,
    write_study_csv,
)
from .cmb import ConformalTimes, evolve_cmb, synthetic_hump_spectrum, write_evolved_csv
from .exceptions import ConfigError, DomainError, GridError, NonConvergenceError, SpectrumFormatError
from .fields import PowerSpectrum, SpectrumKind, power_law_spectrum, read_spectrum, write_spectrum
from .harmonics import make_grid
from .operator import FractionalParams
from .rng import StreamFactory
from .solver import SphericalTransform, GridField, write_coefficients_csv

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

_OPERATOR = {"alpha": 0.8, "gamma": 0.8, "hurst": 0.5, "extended": False}

DEFAULTS = {
    "simulate": {
        **_OPERATOR,
        "L": 32, "t": 1e-5, "t0": 1e-5, "realizations": 1,
        "init_spectrum": {"type": "power_law", "exponent": 5.0},
        "noise_spectrum": {"type": "power_law", "exponent": 5.0},
        "grid_kind": "gauss-legendre", "n_rings": None, "n_phi": None,
    },
    "truncation-study": {
        **_OPERATOR,
        "r": 1.5, "L0": 256, "L_list": [8, 16, 32, 64, 128], "t": 1e-5, "t0": 1e-5, "N": 50,
        "init_spectrum": None, "noise_spectrum": None,
        "evaluation": "coefficient", "grid_kind": "gauss-legendre", "n_rings": None, "n_phi": None,
        "fit_window": [None, None],
    },
    "increment-study": {
        **_OPERATOR, "hurst": 0.9,
        "r": 1.5, "L": 256, "t": 1e-5, "t0": 1e-5,
        "h_list": np.logspace(-7, -1, 13).tolist(), "N": 100,
        "init_spectrum": None, "noise_spectrum": None,
        "construction": "shared", "fit_window": "auto",
    },
    "cmb-evolve": {
        "alpha": 0.5, "gamma": 0.5, "hurst": 0.9, "extended": False,
        "spectrum": None, "L": None, "N": 100, "t0": 1e-7,
        "eta_star": 2.735e-5, "eta1": 1.001 * 2.735e-5, "eta2": 1.1 * 2.735e-5,
        "ell_ref": 219, "noise_scale": 1.0,
        "hump": {"L": 300, "peak": 219, "width": 15.0, "amplitude": 5000.0, "floor": 500.0},
    },
    "spectrum-tools": {
        "action": "convert", "input": None, "output": "spectrum.txt", "to_kind": "cl",
        "hump": {"L": 300, "peak": 219, "width": 15.0, "amplitude": 5000.0, "floor": 500.0},
    },
}
COMMON = {"seed": 0, "threads": 1, "out": "out", "kind": "cl"}


# ---------------------------------------------------------------------------
# configuration


def _load_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


# mappings merged key by key; every other value (spectra included) is replaced whole
_NESTED = {"hump"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _NESTED and isinstance(val, dict):
            unknown = set(val) - set(out[key])
            if unknown:
                raise ConfigError(f"unknown keys under {key!r}: {sorted(unknown)}")
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    parts = key.strip().split(".")
    if parts[0] not in cfg:
        raise ConfigError(f"unknown config key {parts[0]!r}")
    if len(parts) == 1:
        cfg.update(_merge(cfg, {parts[0]: value}))
        return
    node = cfg
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        if not isinstance(node[p], dict):
            raise ConfigError(f"{p!r} is not a mapping")
        node = node[p]
    node[parts[-1]] = value


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = {**copy.deepcopy(COMMON), **copy.deepcopy(DEFAULTS[command])}
    if args.config:
        data = _load_file(args.config)
        section = data.pop(command, None)
        for other in DEFAULTS:
            data.pop(other, None)
        cfg = _merge(cfg, data)
        if isinstance(section, dict):
            cfg = _merge(cfg, section)
    for assignment in args.set or ():
        _apply_set(cfg, assignment)
    for flag in COMMON:
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    _validate_common(cfg)
    return cfg


def _validate_common(cfg: dict) -> None:
    try:
        seed = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    threads = cfg["threads"]
    if threads == "auto":
        cfg["threads"] = os.cpu_count() or 1
    elif not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer or 'auto'")
    if cfg["kind"] not in ("cl", "dl"):
        raise ConfigError("kind must be 'cl' or 'dl'")


def _params(cfg: dict) -> FractionalParams:
    try:
        return FractionalParams(float(cfg["alpha"]), float(cfg["gamma"]), float(cfg["hurst"]),
                                bool(cfg["extended"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"operator parameters: {exc}") from None


def _spectrum(spec, L: int, default_exponent: float | None, kind: str) -> PowerSpectrum:
    if spec is None:
        if default_exponent is None:
            raise ConfigError("spectrum not specified")
        return power_law_spectrum(L, default_exponent)
    if isinstance(spec, str):
        spec = {"type": "file", "path": spec}
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("spectrum must be a path or a mapping with 'type'")
    typ = spec["type"]
    if typ == "zero":
        return PowerSpectrum(np.zeros(L + 1))
    if typ == "power_law":
        return power_law_spectrum(L, float(spec["exponent"]), float(spec.get("scale", 1.0)))
    if typ == "file":
        s = read_spectrum(Path(spec["path"]), spec.get("kind", kind))
        s = s.converted("cl") if s.kind is SpectrumKind.DL else s
        if s.lmax < L:
            raise ConfigError(f"spectrum file stops at l = {s.lmax}, need {L}")
        return s.truncated(L)
    raise ConfigError(f"unknown spectrum type {typ!r}")


# ---------------------------------------------------------------------------
# outputs


class OutputSet:
    """Tracks files written by one run so a failure can remove them."""

    def __init__(self, root):
        self.root = Path(root)
        self.created_root = not self.root.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.created_root:
            try:
                self.root.rmdir()
            except OSError:
                pass


def _manifest(out: OutputSet, command: str, cfg: dict, results: dict, notes: list) -> None:
    write_manifest(out.path("manifest.json"), {
        "command": command,
        "version": __version__,
        "config": cfg,
        "results": results,
        "warnings": notes,
    })


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, out: OutputSet) -> dict:
    params = _params(cfg)
    L = int(cfg["L"])
    if L < 0 or cfg["t"] < 0 or cfg["t0"] < 0 or int(cfg["realizations"]) < 1:
        raise ConfigError("need L >= 0, t >= 0, t0 >= 0 and realizations >= 1")
    init = _spectrum(cfg["init_spectrum"], L, None, cfg["kind"])
    noise = _spectrum(cfg["noise_spectrum"], L, None, cfg["kind"])
    R = cfg["n_rings"] or L + 1
    K = cfg["n_phi"] or 2 * L + 2
    grid = make_grid(cfg["grid_kind"], int(R), int(K))
    transform = SphericalTransform(grid, L)
    factory = StreamFactory(int(cfg["seed"]))
    files = []
    for n in range(int(cfg["realizations"])):
        c = solution_coefficients(factory, n, L, float(cfg["t"]), float(cfg["t0"]), params, init, noise)
        field = GridField(grid, transform.synthesize_fft(c), float(cfg["t"]))
        fp, cp = f"field_{n:04d}.csv", f"coeffs_{n:04d}.csv"
        field.write_csv(out.path(fp))
        write_coefficients_csv(c, out.path(cp))
        files += [fp, cp]
    return {"files": files, "grid": {"kind": grid.kind.value, "n_rings": grid.n_rings, "n_phi": grid.n_phi},
            "grid_exact": grid.is_exact_for(L)}


def _window(value):
    if value == "auto":
        return value
    if value is None:
        return (None, None)
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError("fit_window must be [lo, hi] (null for open) or 'auto'")
    return tuple(None if v is None else float(v) for v in value)


def cmd_truncation_study(cfg: dict, out: OutputSet) -> dict:
    params = _params(cfg)
    L0 = int(cfg["L0"])
    exponent = 2.0 * float(cfg["r"]) + 2.0
    tc = TruncationConfig(
        params=params,
        init_spectrum=_spectrum(cfg["init_spectrum"], L0, exponent, cfg["kind"]),
        noise_spectrum=_spectrum(cfg["noise_spectrum"], L0, exponent, cfg["kind"]),
        L0=L0, L_list=tuple(int(x) for x in cfg["L_list"]), t=float(cfg["t"]), t0=float(cfg["t0"]),
        N=int(cfg["N"]), seed=int(cfg["seed"]), evaluation=cfg["evaluation"],
        grid_kind=cfg["grid_kind"], n_rings=cfg["n_rings"], n_phi=cfg["n_phi"],
        fit_window=_window(cfg["fit_window"]), threads=int(cfg["threads"]),
    )
    stats = truncation_study(tc)
    write_study_csv(stats, out.path("truncation.csv"), "L", "mean_sq_error")
    write_spectrum_csv(PowerSpectrum(stats.per_degree_power), out.path("spectrum.csv"))
    return {
        "fit": None if stats.fit is None else stats.fit.as_dict(),
        "fit_window": list(stats.fit_window),
        "expected_slope": -float(cfg["r"]),
        "n_realizations": stats.n_realizations,
        "diagnostics": stats.diagnostics,
    }


def cmd_increment_study(cfg: dict, out: OutputSet) -> dict:
    params = _params(cfg)
    L = int(cfg["L"])
    exponent = 2.0 * float(cfg["r"]) + 2.0
    ic = IncrementConfig(
        params=params,
        init_spectrum=_spectrum(cfg["init_spectrum"], L, exponent, cfg["kind"]),
        noise_spectrum=_spectrum(cfg["noise_spectrum"], L, exponent, cfg["kind"]),
        L=L, t=float(cfg["t"]), t0=float(cfg["t0"]), h_list=tuple(float(h) for h in cfg["h_list"]),
        N=int(cfg["N"]), seed=int(cfg["seed"]), construction=cfg["construction"],
        fit_window=_window(cfg["fit_window"]), threads=int(cfg["threads"]),
    )
    stats = increment_study(ic)
    write_study_csv(stats, out.path("increment.csv"), "h", "mean_sq_increment")
    return {
        "fit": None if stats.fit is None else stats.fit.as_dict(),
        "fit_window": list(stats.fit_window),
        "hurst": params.hurst,
        "n_realizations": stats.n_realizations,
        "diagnostics": stats.diagnostics,
    }


def _hump(cfg_hump: dict) -> PowerSpectrum:
    h = dict(cfg_hump)
    return synthetic_hump_spectrum(int(h["L"]), int(h["peak"]), float(h["width"]),
                                   float(h["amplitude"]), float(h["floor"]))


def cmd_cmb_evolve(cfg: dict, out: OutputSet) -> dict:
    params = _params(cfg)
    times = ConformalTimes(float(cfg["eta_star"]), float(cfg["eta1"]), float(cfg["eta2"]))
    if cfg["spectrum"] is None:
        spectrum = _hump(cfg["hump"])
    else:
        spectrum = read_spectrum(Path(cfg["spectrum"]), cfg["kind"])
    result = evolve_cmb(
        spectrum, times, params, t0=float(cfg["t0"]), L=cfg["L"], N=int(cfg["N"]),
        seed=int(cfg["seed"]), noise_scale=float(cfg["noise_scale"]), ell_ref=int(cfg["ell_ref"]),
    )
    write_evolved_csv(result, out.path("cmb_spectra.csv"))
    return result.summary()


def cmd_spectrum_tools(cfg: dict, out: OutputSet) -> dict:
    action = cfg["action"]
    to_kind = SpectrumKind(cfg["to_kind"])
    if action == "hump":
        spectrum = _hump(cfg["hump"])
    elif action == "convert":
        if not cfg["input"]:
            raise ConfigError("convert needs 'input'")
        spectrum = read_spectrum(Path(cfg["input"]), cfg["kind"])
    else:
        raise ConfigError(f"unknown action {action!r}")
    name = Path(cfg["output"]).name
    write_spectrum(spectrum.converted(to_kind), out.path(name))
    return {"output": name, "lmax": spectrum.lmax, "kind": to_kind.value}


COMMANDS = {
    "simulate": cmd_simulate,
    "truncation-study": cmd_truncation_study,
    "increment-study": cmd_increment_study,
    "cmb-evolve": cmd_cmb_evolve,
    "spectrum-tools": cmd_spectrum_tools,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphspde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=lambda s: s if s == "auto" else int(s))
        p.add_argument("--out", help="output directory")
        p.add_argument("--kind", choices=["cl", "dl"], help="kind of spectrum files read")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (dotted keys for nested values)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    notes: list[str] = []
    out = None
    try:
        cfg = resolve_config(args.command, args)
        out = OutputSet(cfg["out"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            results = COMMANDS[args.command](cfg, out)
        for w in caught:
            notes.append(str(w.message))
            print(f"warning: {w.message}", file=sys.stderr)
        _manifest(out, args.command, cfg, results, notes)
    except (ConfigError, DomainError, GridError, KeyError, TypeError) as exc:
        return _fail(out, EXIT_CONFIG, f"config error: {exc}")
    except (OSError, SpectrumFormatError) as exc:
        return _fail(out, EXIT_IO, f"io error: {exc}")
    except (NonConvergenceError, ArithmeticError) as exc:
        return _fail(out, EXIT_NUMERIC, f"numerical failure: {exc}")
    return EXIT_OK


def _fail(out: OutputSet | None, code: int, message: str) -> int:
    if out is not None:
        out.discard()
    print(message, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
