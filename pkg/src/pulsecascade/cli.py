"""Command-line entry point: ``pulsecascade <scenario> [options]``.

Every run writes its outputs plus ``manifest.json`` (config echo, code
version, grid and truncation used, convergence deltas, wall-clock time) into
its own output directory. Exit codes: 0 success, 2 invalid configuration,
3 failed convergence check, 4 numerical failure, 1 failed ``check``.
"""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import mode_moments, reduced_density
from .errors import ConfigurationError, IntegrationError, TruncationError
from .experiments import (
    LABELS,
    SCENARIOS,
    ExperimentConfig,
    build_setup,
    property_battery,
    run,
    run_setup,
)
from .pulses import TimeGrid

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_NUMERICS = 0, 1, 2, 3, 4
CONVERGENCE_TOL = 1e-3

# subcommand -> scenario id
COMMANDS = {s.replace("_", "-"): s for s in SCENARIOS}


@dataclass
class RunManifest:
    config: dict
    code_version: str
    grid: dict
    truncation: dict
    convergence: dict
    wall_clock_s: float
    outputs: list = field(default_factory=list)

    def write(self, directory: Path) -> Path:
        """Write atomically; refuses if a listed output is missing."""
        missing = [p for p in self.outputs if not (directory / p).exists()]
        if missing:
            raise IntegrationError(f"manifest lists missing outputs: {missing}")
        path = directory / "manifest.json"
        tmp = directory / ".manifest.json.tmp"
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path


# -- config loading --------------------------------------------------------------------


class ConfigFileError(ConfigurationError):
    pass


def _key_line(text: str, message: str) -> int:
    """Line of the first config key mentioned in ``message`` (1 if none is)."""
    for key in re.findall(r"[A-Za-z_]+", message):
        m = re.search(rf'"{re.escape(key)}"\s*:', text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return 1


def load_config_file(path) -> list[dict]:
    """Parse a JSON config (one object, or a list for a sweep); errors carry a line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    items = data if isinstance(data, list) else [data]
    for item in items:
        if not isinstance(item, dict):
            raise ConfigFileError(f"{path}:1: config entries must be JSON objects")
    return [dict(item, _text=text, _path=str(path)) for item in items]


def _validated(scenario: str, small: bool, values: dict, text: str = "", path: str = "<flags>") -> ExperimentConfig:
    try:
        if "scenario" in values and values["scenario"] != scenario:
            raise ConfigurationError(f"scenario {values['scenario']!r} does not match subcommand {scenario!r}")
        values = {k: v for k, v in values.items() if k != "scenario"}
        if "alpha" in values and isinstance(values["alpha"], list):
            values["alpha"] = complex(*values["alpha"])
        return ExperimentConfig.for_scenario(scenario, small=small, **values)
    except (ConfigurationError, TypeError, ValueError) as exc:
        line = _key_line(text, str(exc)) if text else 0
        where = f"{path}:{line}" if text else path
        raise ConfigFileError(f"{where}: {exc}") from exc


def _flag_overrides(args) -> dict:
    mapping = {
        "t_p": args.t_p,
        "tau": args.tau,
        "gamma": args.gamma,
        "kerr": args.kerr,
        "kerr_scan": tuple(args.kerr_scan) if args.kerr_scan else None,
        "fock_n": args.n,
        "alpha": complex(args.alpha.replace("i", "j")) if args.alpha is not None else None,
        "t_end": args.t_end,
        "dt": args.dt,
        "passes": args.passes,
        "snapshot_passes": tuple(args.snapshot_passes) if args.snapshot_passes else None,
        "sample_every": args.sample_every,
    }
    out = {k: v for k, v in mapping.items() if v is not None}
    if args.window:
        out["windows"] = {lab: (off, size) for lab, off, size in args.window}
    return out


def configs_from_args(args, scenario: str) -> list[ExperimentConfig]:
    """File values first, flags on top, then the output directory."""
    flags = _flag_overrides(args)
    entries = load_config_file(args.config) if args.config else [{}]
    configs = []
    for k, entry in enumerate(entries):
        text = entry.pop("_text", "")
        path = entry.pop("_path", "<flags>")
        values = dict(entry)
        if "windows" in values and "windows" in flags:
            values["windows"] = {**values["windows"], **flags["windows"]}
            flags_here = {**flags, "windows": values["windows"]}
        else:
            flags_here = flags
        values.update(flags_here)
        out_dir = Path(args.out) if args.out else Path("runs") / scenario
        if len(entries) > 1:
            out_dir = out_dir / f"run{k:03d}"
        values["output_dir"] = str(out_dir)
        if "windows" in values:
            values["windows"] = {lab: tuple(w) for lab, w in values["windows"].items()}
        configs.append(_validated(scenario, args.small, values, text, path))
    return configs


# -- convergence -----------------------------------------------------------------------


def convergence_check(cfg: ExperimentConfig, horizon: float | None = None, tol: float = CONVERGENCE_TOL) -> dict:
    """Integrate to ``horizon`` (default: the pulse centre) with ``dt`` and ``dt/2``.

    Compares the mode populations and the first two moments of the u mode.
    """
    horizon = cfg.t_p if horizon is None else horizon
    horizon = min(horizon, cfg.t_end)
    finals = []
    for dt in (cfg.dt, cfg.dt / 2):
        c = cfg.with_dt(dt)
        setup = build_setup(c, kerr=c.kerr if c.scenario == "squeeze" else None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = run_setup(setup, t_end=horizon, sample_every=10**9)
        m1, m2, _ = mode_moments(reduced_density(tr.final, "u"))
        vals = [tr.real(f"n_{k}")[-1] for k in LABELS] + [m1.real, m1.imag, m2.real, m2.imag]
        finals.append(np.array(vals))
    delta = float(np.max(np.abs(finals[0] - finals[1])))
    return {"horizon": horizon, "dt": cfg.dt, "dt_half": cfg.dt / 2, "max_delta": delta, "tol": tol, "passed": delta <= tol}


# -- main ------------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (an object, or a list of objects for a sweep)")
    p.add_argument("--out", help="output directory (default runs/<scenario>)")
    p.add_argument("--small", action="store_true", help="desk-scale preset")
    p.add_argument("--skip-convergence", action="store_true", help="skip the dt vs dt/2 self-check")
    p.add_argument("--convergence-horizon", type=float, help="end time of the convergence check (default t_p)")
    p.add_argument("--convergence-tol", type=float, default=CONVERGENCE_TOL, help="largest accepted dt vs dt/2 difference")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("--t-p", type=float, dest="t_p")
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--kerr", type=float)
    p.add_argument("--kerr-scan", type=float, nargs="+", dest="kerr_scan")
    p.add_argument("--n", type=int, help="Fock-state input photon number")
    p.add_argument("--alpha", help="coherent amplitude, e.g. 4 or 1+2j")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--dt", type=float)
    p.add_argument("--passes", type=int)
    p.add_argument("--snapshot-passes", type=int, nargs="+", dest="snapshot_passes")
    p.add_argument("--sample-every", type=int, dest="sample_every")
    p.add_argument(
        "--window", nargs=3, action="append", metavar=("MODE", "OFFSET", "SIZE"),
        type=_window_arg, help="Fock window of mode u, c or v (repeatable)",
    )


def _window_arg(s: str):
    return s if s in LABELS else int(s)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsecascade", description="Quantum pulses scattering on localized systems.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _add_run_flags(sub.add_parser(name, help=f"run the {name} scenario"))
    chk = sub.add_parser("check", help="run the oracle property battery")
    chk.add_argument("--small", action="store_true")
    return parser


def _relative(paths, root: Path) -> list[str]:
    return sorted(str(Path(p).resolve().relative_to(root.resolve())) for p in paths if p is not None)


def _sweep_worker(job) -> int:
    cfg, skip, horizon, tol = job
    ns = argparse.Namespace(skip_convergence=skip, convergence_horizon=horizon, convergence_tol=tol)
    try:
        return _run_one(cfg, ns)
    except (IntegrationError, TruncationError) as exc:
        print(f"error in {cfg.output_dir}: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


def _run_one(cfg: ExperimentConfig, args) -> int:
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.skip_convergence:
        conv = {"skipped": True}
    else:
        conv = convergence_check(cfg, args.convergence_horizon, args.convergence_tol)
        print(f"convergence: max |delta| = {conv['max_delta']:.3g} (tol {conv['tol']:g})")
        if not conv["passed"]:
            print(f"error: dt={cfg.dt} is not converged; reduce --dt", file=sys.stderr)
            _write_manifest(cfg, out, conv, start, [])
            return EXIT_CONVERGENCE
    result = run(cfg)
    manifest = _write_manifest(cfg, out, conv, start, result.files)
    print(json.dumps(_headline(result.summary), default=str))
    print(f"outputs in {out} ({manifest.name})")
    return EXIT_OK


def _write_manifest(cfg, out: Path, conv: dict, start: float, files) -> Path:
    grid = TimeGrid.span(0.0, cfg.t_end, cfg.dt)
    manifest = RunManifest(
        config=cfg.to_dict(),
        code_version=__version__,
        grid={"t0": grid.t0, "dt": grid.dt, "steps": grid.steps, "t_end": grid.t_end},
        truncation={lab: [cfg.window(lab).offset, cfg.window(lab).size] for lab in LABELS},
        convergence=conv,
        wall_clock_s=time.perf_counter() - start,
        outputs=_relative(files, out),
    )
    return manifest.write(out)


def _headline(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if not isinstance(v, dict)}


def _check(args) -> int:
    results = property_battery(small=args.small)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return _check(args)
        scenario = COMMANDS[args.command]
        configs = configs_from_args(args, scenario)
        if len(configs) == 1:
            return _run_one(configs[0], args)
        jobs = [(cfg, args.skip_convergence, args.convergence_horizon, args.convergence_tol) for cfg in configs]
        if args.workers == 1:
            codes = [_sweep_worker(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                codes = list(pool.map(_sweep_worker, jobs))
        return max(codes)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, TruncationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
