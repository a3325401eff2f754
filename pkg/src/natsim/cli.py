"""Command-line interface.

Every command resolves its settings from built-in defaults, then an optional
JSON config file (``--config``), then explicit flags; the command line wins.
The resolved settings are written to ``config.json`` in the output directory
and embedded in every JSON artifact, so feeding ``config.json`` back through
``--config`` reproduces the run.  The output directory and worker count are
not part of the resolved config because they never change file contents.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConfigParseError, NatSimError, SolverError, ValidationError
from .network import (
    InterferenceMode,
    network_from_dict,
    network_to_dict,
    standard_four_site,
    validate_network,
)
from .serialization import dump_json, dumps

COMMANDS = ("simulate", "steady", "sweep-dephasing", "sweep-disorder", "ensemble", "bench", "validate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_OTHER = 5

EPILOG = """\
exit codes:
  0  success
  2  usage or config error (unknown flag, malformed JSON, conflicting options)
  3  validation error (invalid network or parameter)
  4  solver error (degenerate steady state, step-size underflow, invariant violation)
  5  other simulation error (basis dimension cap exceeded, analysis failure)
On failure a JSON error report is written to stderr.

environment:
  NAT_SIM_MAX_DIM  cap on the Liouville-space dimension (default 1048576)
"""

# Keys that make up the resolved config of each command.
COMMAND_KEYS = {
    "simulate": ("network", "engine", "cutoff", "tol", "t_final"),
    "steady": ("network", "engine", "cutoff"),
    "sweep-dephasing": ("mode", "disorder", "dephasing", "engine", "cutoff", "couplings"),
    "sweep-disorder": ("mode", "disorder", "dephasing", "engine", "cutoff", "couplings"),
    "ensemble": ("mode", "disorder", "width", "samples", "seed", "engine", "cutoff", "couplings"),
    "bench": ("engine", "sizes", "cutoff", "repetitions", "t_final"),
    "validate": ("network",),
}
SHORTHAND_KEYS = ("mode", "disorder", "dephasing", "couplings")
CONFIG_KEYS = set(k for keys in COMMAND_KEYS.values() for k in keys) | {"command", "out", "workers", "mode", "disorder", "dephasing", "couplings"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigParseError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="natsim",
        description="Noise-assisted transport in networks of coupled cavities.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"natsim {__version__}")
    common = _Parser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", metavar="PATH", default=S, help="JSON config file; flags override its values")
    common.add_argument("--network", metavar="PATH", default=S, help="network JSON file (excludes --mode/--disorder/--dephasing)")
    common.add_argument("--mode", choices=[m.value for m in InterferenceMode], default=S, help="interference mode of the standard network (default constructive)")
    common.add_argument("--disorder", type=_float_list, metavar="W[,W...]", default=S, help="omega_2 value(s); sweeps accept a list, ensemble takes the window center")
    common.add_argument("--dephasing", type=_float_list, metavar="G[,G...]", default=S, help="gamma_2 value(s)")
    common.add_argument("--couplings", type=_float_list, metavar="G01,G02,G13,G23", default=S, help="override the standard couplings")
    common.add_argument("--engine", choices=["fock", "moments", "both"], default=S, help="simulation engine (default fock)")
    common.add_argument("--cutoff", type=int, metavar="INT", default=S, help="max photons per site for the fock engine (default 3)")
    common.add_argument("--tol", type=float, metavar="FLOAT", default=S, help="integrator tolerance (default 1e-8)")
    common.add_argument("--t-final", dest="t_final", type=float, metavar="T", default=S, help="evolution time in inverse coupling units")
    common.add_argument("--width", type=float, metavar="W", default=S, help="ensemble window width (default 1.0)")
    common.add_argument("--samples", type=int, metavar="INT", default=S, help="ensemble members (default 21)")
    common.add_argument("--seed", type=int, metavar="INT", default=S, help="draw ensemble members at random with this seed")
    common.add_argument("--sizes", type=_int_list, metavar="N[,N...]", default=S, help="benchmark network sizes")
    common.add_argument("--repetitions", type=int, metavar="INT", default=S, help="timed benchmark runs per size (default 3)")
    common.add_argument("--out", metavar="DIR", default=S, help="output directory (default runs/<timestamp>-<command>)")
    common.add_argument("--workers", type=int, metavar="INT", default=S, help="parallel worker processes for sweeps (default: available cores)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "simulate": "evolve from the vacuum and write the trajectory with E_tr",
        "steady": "solve for the steady state and report the transmission",
        "sweep-dephasing": "normalized transmission versus gamma_2, one curve per omega_2",
        "sweep-disorder": "normalized transmission versus omega_2, one curve per gamma_2",
        "ensemble": "transmission averaged over static disorder in a window",
        "bench": "wall-time scaling with network size",
        "validate": "check a network and print 'valid'",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name], epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _default_workers() -> int:
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return os.cpu_count() or 1


def _load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigParseError("config must be a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigParseError(f"unknown config keys: {sorted(unknown)}")
    return data


def _as_list(value, name: str) -> list[float]:
    values = value if isinstance(value, list) else [value]
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigParseError(f"{name} must be a number or a list of numbers") from None


def _scalar(value, name: str) -> float:
    values = _as_list(value, name)
    if len(values) != 1:
        raise ConfigParseError(f"{name} takes a single value for this command")
    return values[0]


def resolve(command: str, file_cfg: dict, flags: dict) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; return (resolved config, run options)."""
    if "command" in file_cfg and file_cfg["command"] != command:
        raise ConfigParseError(f"config is for command {file_cfg['command']!r}, not {command!r}")
    explicit = {**file_cfg, **flags}
    explicit.pop("command", None)
    options = {
        "out": explicit.pop("out", None),
        "workers": int(explicit.pop("workers", _default_workers())),
    }
    keys = COMMAND_KEYS[command]
    cfg: dict = {"command": command}

    if "network" in keys:
        given = [k for k in SHORTHAND_KEYS if k in explicit]
        if "network" in explicit:
            if given:
                raise ConfigParseError(f"--network excludes the shorthand options {given}")
            net = explicit["network"]
            if isinstance(net, str):
                try:
                    net = json.loads(Path(net).read_text())
                except (OSError, json.JSONDecodeError) as exc:
                    raise ConfigParseError(f"cannot read network {explicit['network']}: {exc}") from exc
            spec = network_from_dict(net)
        else:
            spec = standard_four_site(
                explicit.get("mode", "constructive"),
                _scalar(explicit.get("disorder", 0.0), "disorder"),
                _scalar(explicit.get("dephasing", 0.0), "dephasing"),
                explicit.get("couplings"),
            )
        cfg["network"] = network_to_dict(spec)
    else:
        unused = [k for k in explicit if k not in keys]
        if "network" in unused:
            raise ConfigParseError(f"command {command!r} does not take a network file")

    from .experiments import DEFAULT_DEPHASING_GRID, DEFAULT_DISORDER_GRID

    defaults = {
        "mode": "constructive",
        "engine": "fock",
        "cutoff": 3,
        "tol": 1e-8,
        "t_final": 10.0 if command == "bench" else 50.0,
        "width": 1.0,
        "samples": 21,
        "seed": None,
        "repetitions": 3,
        "couplings": None,
    }
    for key in keys:
        if key == "network":
            continue
        if key == "disorder":
            if command == "ensemble":
                cfg[key] = _scalar(explicit.get(key, 0.0), key)
            else:
                cfg[key] = _as_list(explicit.get(key, list(DEFAULT_DISORDER_GRID)), key)
        elif key == "dephasing":
            cfg[key] = _as_list(explicit.get(key, list(DEFAULT_DEPHASING_GRID)), key)
        elif key == "couplings":
            val = explicit.get(key)
            cfg[key] = None if val is None else _as_list(val, key)
        elif key == "sizes":
            engine = explicit.get("engine", "fock")
            default = [2, 3, 4, 5] if engine == "fock" else [4, 8, 16, 32, 64]
            cfg[key] = [int(v) for v in explicit.get(key, default)]
        else:
            cfg[key] = explicit.get(key, defaults[key])
    if "mode" in cfg:
        cfg["mode"] = InterferenceMode.parse(cfg["mode"]).value
    for key in ("cutoff", "samples", "repetitions"):
        if key in cfg and cfg[key] is not None:
            cfg[key] = int(cfg[key])
    for key in ("tol", "t_final", "width"):
        if key in cfg:
            cfg[key] = float(cfg[key])
    if cfg.get("engine") not in (None, "fock", "moments", "both"):
        raise ConfigParseError(f"unknown engine {cfg['engine']!r}")
    if command == "bench" and cfg["engine"] == "both":
        raise ConfigParseError("bench takes a single engine (fock or moments)")
    return cfg, options


def _out_dir(out: str | None, command: str) -> Path:
    if out is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{stamp}-{command}"
        k = 1
        while path.exists():
            path = Path("runs") / f"{stamp}-{command}-{k}"
            k += 1
    else:
        path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- commands -------------------------------------------------------------------


def _cmd_validate(cfg, _opts, _out):
    validate_network(network_from_dict(cfg["network"]))
    print("valid")
    return None


def _cmd_simulate(cfg, _opts, out: Path):
    from .fock import build_basis
    from .lindblad import DensityMatrix, build_liouvillian, evolve
    from .moments import build_moment_generator, evolve_moments

    net = validate_network(network_from_dict(cfg["network"]))
    engines = ["fock", "moments"] if cfg["engine"] == "both" else [cfg["engine"]]
    summary = {"config": cfg, "runs": {}}
    for engine in engines:
        if engine == "fock":
            basis = build_basis(net.n_sites, cfg["cutoff"])
            traj = evolve(build_liouvillian(net, basis), DensityMatrix.vacuum(basis), cfg["t_final"], cfg["tol"])
        else:
            traj = evolve_moments(build_moment_generator(net), None, cfg["t_final"], cfg["tol"])
        stem = "trajectory" if len(engines) == 1 else f"trajectory_{engine}"
        traj.write(out, stem, extra={"config": cfg})
        summary["runs"][engine] = {
            "file": f"{stem}.csv",
            "e_tr_final": float(traj.e_tr[-1]),
            "late_slope": traj.energy.late_slope(),
        }
    dump_json(summary, out / "summary.json")
    return summary


def _cmd_steady(cfg, _opts, out: Path):
    from .fock import build_basis
    from .lindblad import build_liouvillian, steady_state, transmission
    from .moments import build_moment_generator, steady_moments, transmission_from_moments

    net = validate_network(network_from_dict(cfg["network"]))
    result = {"config": cfg}
    if cfg["engine"] in ("fock", "both"):
        basis = build_basis(net.n_sites, cfg["cutoff"])
        rho = steady_state(build_liouvillian(net, basis))
        result["fock"] = {
            "transmission": transmission(rho, net, basis),
            "occupations": rho.occupations(basis).tolist(),
        }
    if cfg["engine"] in ("moments", "both"):
        C = steady_moments(build_moment_generator(net))
        result["moments"] = {
            "transmission": transmission_from_moments(C, net),
            "occupations": C.occupations().tolist(),
        }
    primary = "moments" if cfg["engine"] == "moments" else "fock"
    result["transmission"] = result[primary]["transmission"]
    dump_json(result, out / "steady.json")
    print(f"transmission {result['transmission']:.12g}")
    return result


def _cmd_sweep(cfg, opts, out: Path):
    from .experiments import SweepSpec, detect_nat_peak, sweep_dephasing, sweep_disorder, write_curves

    spec = SweepSpec(cfg["mode"], tuple(cfg["disorder"]), tuple(cfg["dephasing"]), cfg["engine"], cfg["cutoff"], cfg["couplings"])
    sweep = sweep_dephasing if cfg["command"] == "sweep-dephasing" else sweep_disorder
    curves = sweep(spec, workers=opts["workers"])
    for c in curves:
        c.metadata["config"] = cfg
    paths = write_curves(curves, out)
    fixed = "omega2" if cfg["command"] == "sweep-dephasing" else "gamma2"
    peaks = []
    for path, curve in zip(paths, curves):
        peak = detect_nat_peak(curve) if len(curve.abscissa) >= 3 else None
        peaks.append({
            "file": path.name,
            fixed: curve.metadata[fixed],
            "nat_peak": None if peak is None else peak._asdict(),
        })
    summary = {"config": cfg, "baseline": curves[0].baseline, "curves": peaks}
    dump_json(summary, out / "summary.json")
    return summary


def _cmd_ensemble(cfg, opts, out: Path):
    from .experiments import ensemble_average
    from .serialization import fmt

    res = ensemble_average(
        cfg["mode"], cfg["disorder"], cfg["width"], cfg["samples"], cfg["engine"],
        cutoff=cfg["cutoff"], couplings=cfg["couplings"], seed=cfg["seed"], workers=opts["workers"],
    )
    with open(out / "ensemble.csv", "w") as fh:
        fh.write("omega2,transmission\n")
        for w, t in zip(res.disorder_values, res.transmissions):
            fh.write(f"{fmt(w)},{fmt(t)}\n")
    summary = {"config": cfg, "mean_transmission": res.mean, "members": len(res.transmissions)}
    dump_json(summary, out / "ensemble.json")
    print(f"mean transmission {res.mean:.12g}")
    return summary


def _cmd_bench(cfg, _opts, out: Path):
    from .bench import complexity_benchmark

    report = complexity_benchmark(cfg["engine"], cfg["sizes"], cfg["cutoff"], cfg["repetitions"], cfg["t_final"])
    report.write(out)
    data = report.to_dict()
    data["config"] = cfg
    dump_json(data, out / "scaling.json")
    return data


HANDLERS = {
    "simulate": _cmd_simulate,
    "steady": _cmd_steady,
    "sweep-dephasing": _cmd_sweep,
    "sweep-disorder": _cmd_sweep,
    "ensemble": _cmd_ensemble,
    "bench": _cmd_bench,
    "validate": _cmd_validate,
}


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigParseError):
        return EXIT_CONFIG
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return EXIT_OTHER


def _report(exc: Exception, code: int) -> None:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ValidationError):
        report["field"] = exc.field
        violations = getattr(exc, "violations", None)
        if violations:
            report["violations"] = [{"error": type(v).__name__, "field": v.field, "message": str(v)} for v in violations]
    sys.stderr.write(dumps(report))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
        command = args.pop("command")
        file_cfg = _load_config(args.pop("config")) if "config" in args else {}
        cfg, opts = resolve(command, file_cfg, args)
        out = None if command == "validate" else _out_dir(opts["out"], command)
        if out is not None:
            dump_json(cfg, out / "config.json")
        HANDLERS[command](cfg, opts, out)
    except NatSimError as exc:
        code = _exit_code(exc)
        _report(exc, code)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
