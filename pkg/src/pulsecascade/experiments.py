"""Scripted scenarios: Rabi oscillations, empty-cavity transport, Kerr squeezing and cats.

Each scenario is described by an :class:`ExperimentConfig` (JSON-serializable)
and returns a result object with the acceptance-relevant scalars in
``summary``. When the config names an output directory the scenario writes its
CSV data and ``summary.json`` there.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .analysis import (
    WignerField,
    fit_cat,
    min_variance,
    mode_moments,
    mode_overlap,
    reduced_density,
    variance_scan,
    wigner,
    write_variance_scan,
)
from .dynamics import C, U, V, SystemSpec, Trajectory, integrate
from .errors import ConfigurationError, IntegrationError
from .fock import CompositeSpace, DensityMatrix, FockWindow, coherent_state, fock_state, mode_operator, product_state
from .frames import (
    ModeMatrix,
    mode_matrix_three,
    pass_count,
    single_pass_kerr,
    three_mode_generator,
    two_mode_generator,
)
from .pulses import CouplingSchedule, ModeFunction, TimeGrid, cavity_output_mode, gaussian_mode, make_schedule

SCENARIOS = ("rabi", "empty_cavity", "squeeze", "cat_single", "cat_multi")
LABELS = (U, C, V)
SCHEDULE_REFINEMENT = 4
INPUT_MIN_WEIGHT = 1 - 1e-4
PEAK_PROMINENCE = 0.05
LEAKAGE_BUDGET = 1e-2
SNAPSHOT_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)

# scenario defaults; windows are (offset, size) per mode, None means derived from the input
DEFAULTS = {
    "rabi": dict(fock_n=20, t_end=12.0, dt=1e-3),
    "empty_cavity": dict(alpha=2.0, kerr=0.0, t_end=16.0, dt=5e-3, windows={U: (0, 16), C: (0, 2), V: (0, 2)}),
    "squeeze": dict(
        alpha=4.0, kerr=0.02, kerr_scan=(0.02, 0.04, 0.08), t_end=16.0, dt=5e-3,
        windows={U: (0, 36), C: (0, 5), V: (0, 5)},
    ),
    "cat_single": dict(alpha=2.0, kerr=None, t_end=16.0, dt=2e-3, windows={U: (0, 16), C: (0, 6), V: (0, 6)}),
    "cat_multi": dict(alpha=2.0, kerr=0.01, t_end=16.0, dt=1e-2, windows={U: (0, 16), C: (0, 3), V: (0, 3)}),
}

# desk-scale variants: smaller inputs with windows scaled to match
SMALL = {
    "rabi": dict(fock_n=5),
    "empty_cavity": dict(alpha=1.0, windows={U: (0, 10), C: (0, 2), V: (0, 2)}),
    "squeeze": dict(alpha=2.0, kerr_scan=(0.02, 0.04, 0.08), windows={U: (0, 16), C: (0, 3), V: (0, 3)}),
    "cat_single": dict(windows={U: (0, 16), C: (0, 4), V: (0, 4)}),
    "cat_multi": dict(windows={U: (0, 16), C: (0, 3), V: (0, 3)}),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One scenario run.

    Args:
        scenario: one of ``rabi``, ``empty_cavity``, ``squeeze``, ``cat_single``,
            ``cat_multi``.
        t_p, tau: centre and width of the Gaussian pulse.
        gamma: scatterer coupling rate; sets the time unit.
        kerr: Kerr strength ``K`` of the cavity scatterer. ``None`` for
            ``cat_single`` means the single-pass cat value.
        kerr_scan: extra Kerr values for ``squeeze`` (variance curves per K).
        fock_n, alpha: input state, a Fock state or a coherent state.
        windows: Fock window ``(offset, size)`` per mode label u, c, v.
        t_end, dt: integration horizon and step.
        passes: number of passes for ``cat_multi``; ``None`` derives it from the
            cat condition.
        snapshot_passes: passes whose u-mode state is kept (``cat_multi``).
        output_dir: where CSV/JSON output goes; ``None`` writes nothing.
    """

    scenario: str
    t_p: float = 4.0
    tau: float = 1.0
    gamma: float = 1.0
    kerr: float | None = 0.0
    kerr_scan: tuple = ()
    fock_n: int | None = None
    alpha: complex | None = None
    windows: dict | None = None
    t_end: float = 16.0
    dt: float = 5e-3
    passes: int | None = None
    snapshot_passes: tuple | None = None
    sample_every: int = 10
    output_dir: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        for name in ("gamma", "tau", "t_end", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.kerr is not None and self.kerr < 0:
            raise ConfigurationError("kerr must be non-negative")
        if any(k < 0 for k in self.kerr_scan):
            raise ConfigurationError("kerr_scan values must be non-negative")
        if self.fock_n is not None and self.fock_n < 0:
            raise ConfigurationError("fock_n must be non-negative")
        if self.passes is not None and self.passes < 0:
            raise ConfigurationError("passes must be non-negative")
        if self.sample_every < 1:
            raise ConfigurationError("sample_every must be at least 1")
        if self.scenario == "rabi":
            if self.fock_n is None:
                raise ConfigurationError("rabi needs fock_n")
        elif self.alpha is None:
            raise ConfigurationError(f"{self.scenario} needs alpha")
        if self.scenario == "empty_cavity" and self.kerr:
            raise ConfigurationError("empty_cavity requires kerr = 0")
        if self.scenario in ("squeeze", "cat_multi") and self.kerr is None:
            raise ConfigurationError(f"{self.scenario} needs kerr")
        if self.windows is not None:
            missing = set(LABELS) - set(self.windows)
            if missing:
                raise ConfigurationError(f"windows missing for {sorted(missing)}")
            for lab, w in self.windows.items():
                FockWindow(int(w[0]), int(w[1]))
            object.__setattr__(self, "windows", {lab: (int(w[0]), int(w[1])) for lab, w in self.windows.items()})
        object.__setattr__(self, "kerr_scan", tuple(float(k) for k in self.kerr_scan))
        if self.snapshot_passes is not None:
            object.__setattr__(self, "snapshot_passes", tuple(int(k) for k in self.snapshot_passes))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", complex(self.alpha))

    @classmethod
    def for_scenario(cls, scenario: str, small: bool = False, **overrides) -> "ExperimentConfig":
        """Defaults for ``scenario`` (desk-scale with ``small``), then ``overrides``."""
        if scenario not in DEFAULTS:
            raise ConfigurationError(f"unknown scenario {scenario!r}")
        values = dict(DEFAULTS[scenario])
        if small:
            values.update(SMALL[scenario])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(scenario=scenario, **values)

    def window(self, label: str) -> FockWindow:
        if self.windows is None:
            return _derived_windows(self)[label]
        off, size = self.windows[label]
        return FockWindow(int(off), int(size))

    def with_dt(self, dt: float) -> "ExperimentConfig":
        return replace(self, dt=dt)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.alpha is not None:
            d["alpha"] = [self.alpha.real, self.alpha.imag]
        d["kerr_scan"] = list(self.kerr_scan)
        if self.windows is not None:
            d["windows"] = {k: [int(v[0]), int(v[1])] for k, v in self.windows.items()}
        if self.snapshot_passes is not None:
            d["snapshot_passes"] = list(self.snapshot_passes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(extra))}")
        data = dict(data)
        a = data.get("alpha")
        if isinstance(a, (list, tuple)):
            if len(a) != 2:
                raise ConfigurationError("alpha must be a number or [re, im]")
            data["alpha"] = complex(a[0], a[1])
        return cls(**data)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _derived_windows(cfg: ExperimentConfig) -> dict[str, FockWindow]:
    # a Fock pulse exchanges only a few photons in the two-mode frame
    n = int(cfg.fock_n or 0)
    lo = max(0, n - 6)
    return {U: FockWindow(lo, n - lo + 1), C: FockWindow(0, 2), V: FockWindow(0, min(n, 5) + 1)}


# -- common setup -------------------------------------------------------------------


@dataclass
class Setup:
    """Everything a scenario integrates: space, generators, input state, frame data."""

    config: ExperimentConfig
    space: CompositeSpace
    H: object
    Ls: list
    rho0: DensityMatrix
    grid: TimeGrid
    schedule: CouplingSchedule
    mode_matrix: ModeMatrix | None = None
    kerr: float = 0.0

    @property
    def monitored(self) -> tuple[str, ...]:
        """Modes whose window edge counts as truncation leakage (a two-level scatterer never leaks)."""
        return (U, V) if self.config.scenario == "rabi" else LABELS

    @property
    def observables(self):
        return {f"n_{k}": mode_operator(self.space, k).dag() @ mode_operator(self.space, k) for k in LABELS}


def _input_state(cfg: ExperimentConfig, window: FockWindow) -> DensityMatrix:
    if cfg.fock_n is not None and cfg.scenario == "rabi":
        return fock_state(cfg.fock_n, window)
    return coherent_state(cfg.alpha, window, min_weight=INPUT_MIN_WEIGHT)


def _vacuum(window: FockWindow) -> DensityMatrix:
    return fock_state(0, window)


def standard_schedule(cfg: ExperimentConfig, output_mode: bool) -> CouplingSchedule:
    """Gaussian pulse on a grid ``SCHEDULE_REFINEMENT`` times finer than ``dt``.

    With ``output_mode`` the downstream mode is the pulse reflected by the
    empty cavity, otherwise the pulse itself.
    """
    grid = TimeGrid.span(0.0, cfg.t_end, cfg.dt).refined(SCHEDULE_REFINEMENT)
    u = gaussian_mode(cfg.t_p, cfg.tau, grid)
    if not output_mode:
        return make_schedule(u)
    v, _ = cavity_output_mode(u, cfg.gamma)
    return make_schedule(u, v)


def build_setup(cfg: ExperimentConfig, u_state: DensityMatrix | None = None, kerr: float | None = None) -> Setup:
    grid = TimeGrid.span(0.0, cfg.t_end, cfg.dt)
    wins = [cfg.window(k) for k in LABELS]
    if u_state is None:
        u_state = _input_state(cfg, wins[0])
    rho0 = product_state(u_state, _vacuum(wins[1]), _vacuum(wins[2]), labels=LABELS)
    space = rho0.space
    if cfg.scenario == "rabi":
        sched = standard_schedule(cfg, output_mode=False)
        spec = SystemSpec(scatterer=wins[1], gamma=cfg.gamma)
        H, Ls = two_mode_generator(spec, sched, space)
        return Setup(cfg, space, H, Ls, rho0, grid, sched)
    sched = standard_schedule(cfg, output_mode=True)
    mm = mode_matrix_three(sched, cfg.gamma)
    if kerr is None:
        kerr = cfg.kerr if cfg.kerr is not None else single_pass_kerr(mm)
    H, Ls = three_mode_generator(cfg.gamma, kerr, sched, mm, space)
    return Setup(cfg, space, H, Ls, rho0, grid, sched, mm, float(kerr))


def run_setup(setup: Setup, t_end: float | None = None, **kwargs) -> Trajectory:
    grid = setup.grid
    if t_end is not None and t_end < grid.t_end:
        grid = TimeGrid(grid.t0, grid.dt, int(round((t_end - grid.t0) / grid.dt)))
    kwargs.setdefault("sample_every", setup.config.sample_every)
    kwargs.setdefault("monitor", setup.monitored)
    return integrate(setup.H, setup.Ls, setup.rho0, grid, setup.observables, **kwargs)


def _output_dir(cfg: ExperimentConfig) -> Path | None:
    if cfg.output_dir is None:
        return None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_summary(out: Path | None, summary: dict) -> Path | None:
    if out is None:
        return None
    path = out / "summary.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    os.replace(tmp, path)
    return path


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _diagnostics(tr: Trajectory, mm: ModeMatrix | None = None) -> dict:
    d = {
        "trace_drift": tr.trace_drift,
        "min_eigenvalue": tr.min_eigenvalue,
        "leakage": max(tr.edge_population.values(), default=0.0),
        "edge_population": dict(tr.edge_population),
    }
    if mm is not None:
        d["unitarity_residual"] = mm.unitarity_residual()
    return d


@dataclass
class ScenarioResult:
    """Trajectory (if any), final reduced u-mode state and the summary scalars."""

    config: ExperimentConfig
    summary: dict
    trajectory: Trajectory | None = None
    u_state: DensityMatrix | None = None
    extras: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


# -- Rabi ---------------------------------------------------------------------------


def count_maxima(series: np.ndarray, prominence: float = PEAK_PROMINENCE) -> int:
    """Local maxima standing out by at least ``prominence``."""
    peaks, _ = find_peaks(np.asarray(series, dtype=float), prominence=prominence)
    return len(peaks)


def run_rabi(cfg: ExperimentConfig) -> ScenarioResult:
    """Two-level atom driven by a Fock pulse, in the two-mode frame with ``v = u``."""
    setup = build_setup(cfg)
    tr = run_setup(setup)
    n_u, n_c, n_v = (tr.real(f"n_{k}") for k in LABELS)
    n_in = float(cfg.fock_n)
    summary = {
        "scenario": cfg.scenario,
        "fock_n": cfg.fock_n,
        "excited_maxima": count_maxima(n_c),
        "excited_peak": float(n_c.max()),
        "max_u_deficit": float(np.max(n_in - n_u)),
        "v_peak": float(n_v.max()),
        "final_u": float(n_u[-1]),
        "final_excited": float(n_c[-1]),
        "final_v": float(n_v[-1]),
        **_diagnostics(tr),
    }
    res = ScenarioResult(cfg, summary, tr, reduced_density(tr.final, U))
    out = _output_dir(cfg)
    if out is not None:
        tr.to_csv(out / "trajectory.csv")
        res.files = [out / "trajectory.csv", write_summary(out, summary)]
    return res


# -- empty cavity -------------------------------------------------------------------


def reconstructed_output_mode(setup: Setup) -> ModeFunction:
    """Field leaving the scatterer cavity, in the frame's initial u mode.

    The upstream part of ``L0`` is ``g_u^* a_u + sqrt(gamma) c``; its weight on the
    initial pulse mode at time ``t`` is ``g_u^*(t) M_11(t) + sqrt(gamma) M_21(t)``.
    """
    mm = setup.mode_matrix
    sched = setup.schedule
    step = int(round(mm.grid.dt / sched.grid.dt))
    gu = sched.g_u[::step][: len(mm.grid)]
    w = np.conj(gu) * mm.M[:, 0, 0] + np.sqrt(setup.config.gamma) * mm.M[:, 1, 0]
    return ModeFunction.normalized(mm.grid, w)


def run_empty_cavity(cfg: ExperimentConfig) -> ScenarioResult:
    """Coherent pulse on an empty (K = 0) cavity in the three-mode frame."""
    setup = build_setup(cfg)
    tr = run_setup(setup)
    n_in = setup.rho0.expect(setup.observables["n_u"]).real
    mm = setup.mode_matrix
    w = reconstructed_output_mode(setup)
    v = setup.schedule.v
    step = int(round(mm.grid.dt / v.grid.dt))
    v_coarse = ModeFunction.normalized(mm.grid, v.samples[::step][: len(mm.grid)])
    overlap = mode_overlap(v_coarse, w)
    summary = {
        "scenario": cfg.scenario,
        "input_photons": float(n_in),
        "final_u": float(tr.real("n_u")[-1]),
        "final_c": float(tr.real("n_c")[-1]),
        "final_v": float(tr.real("n_v")[-1]),
        "max_c": float(tr.real("n_c").max()),
        "max_v": float(tr.real("n_v").max()),
        "u_photon_error": float(abs(tr.real("n_u")[-1] - n_in)),
        "output_mode_overlap": float(abs(overlap)),
        **_diagnostics(tr, mm),
    }
    res = ScenarioResult(cfg, summary, tr, reduced_density(tr.final, U), {"output_mode": w, "mode_matrix": mm})
    out = _output_dir(cfg)
    if out is not None:
        tr.to_csv(out / "trajectory.csv")
        mm.to_csv(out / "mode_matrix.csv")
        w.to_csv(out / "output_mode.csv")
        res.files = [out / n for n in ("trajectory.csv", "mode_matrix.csv", "output_mode.csv")]
        res.files.append(write_summary(out, summary))
    return res


# -- squeezing ----------------------------------------------------------------------


def _kerr_tag(K: float) -> str:
    return f"K{K:g}"


def run_squeeze(cfg: ExperimentConfig) -> ScenarioResult:
    """Coherent pulse through a Kerr cavity; quadrature variance of the output mode.

    ``cfg.kerr`` is the primary value (summary ``var_star``/``phi_star``); every
    value in ``kerr_scan`` gets its own variance curve.
    """
    values = [float(cfg.kerr)] + [k for k in cfg.kerr_scan if k != cfg.kerr]
    out = _output_dir(cfg)
    per_k, files, states = {}, [], {}
    tr_main = None
    for K in values:
        setup = build_setup(cfg, kerr=K)
        tr = run_setup(setup)
        ru = reduced_density(tr.final, U)
        phi, var = min_variance(ru)
        scan_phi, scan_var = variance_scan(ru)
        per_k[_kerr_tag(K)] = {
            "kerr": K,
            "var_star": var,
            "phi_star": phi,
            "final_u": float(tr.real("n_u")[-1]),
            **_diagnostics(tr, setup.mode_matrix),
        }
        states[K] = ru
        if out is not None:
            tag = _kerr_tag(K)
            write_variance_scan(out / f"variance_{tag}.csv", scan_phi, scan_var)
            files.append(out / f"variance_{tag}.csv")
        if K == cfg.kerr:
            tr_main = tr
    main = per_k[_kerr_tag(cfg.kerr)]
    summary = {
        "scenario": cfg.scenario,
        "alpha": cfg.alpha,
        "kerr": cfg.kerr,
        "var_star": main["var_star"],
        "phi_star": main["phi_star"],
        "by_kerr": per_k,
    }
    res = ScenarioResult(cfg, summary, tr_main, states[cfg.kerr], {"states": states})
    if out is not None:
        tr_main.to_csv(out / "trajectory.csv")
        wigner(states[cfg.kerr]).to_csv(out / "wigner_output.csv")
        in_state = _input_state(cfg, cfg.window(U))
        wigner(in_state).to_csv(out / "wigner_input.csv")
        files += [out / "trajectory.csv", out / "wigner_output.csv", out / "wigner_input.csv"]
        files.append(write_summary(out, summary))
        res.files = files
    return res


# -- cats ----------------------------------------------------------------------------


def _snapshot_steps(grid: TimeGrid, count: int = 5) -> list[int]:
    return [int(round(f * grid.steps)) for f in np.linspace(0.0, 1.0, count)]


def run_cat_single(cfg: ExperimentConfig) -> ScenarioResult:
    """One pass at the single-pass cat strength; reports the loss from the pulse mode."""
    setup = build_setup(cfg)
    steps = _snapshot_steps(setup.grid)
    tr = run_setup(setup, snapshots=steps)
    n_in = setup.rho0.expect(setup.observables["n_u"]).real
    ru = reduced_density(tr.final, U)
    alpha_fit, fid = fit_cat(ru)
    final_u = float(tr.real("n_u")[-1])
    summary = {
        "scenario": cfg.scenario,
        "kerr": setup.kerr,
        "input_photons": float(n_in),
        "final_u": final_u,
        "u_population_fraction": final_u / n_in if n_in > 0 else 1.0,
        "u_population_loss": 1 - final_u / n_in if n_in > 0 else 0.0,
        "cat_alpha": alpha_fit,
        "cat_fidelity": fid,
        **_diagnostics(tr, setup.mode_matrix),
    }
    snaps = {t: reduced_density(s, U) for t, s in sorted(tr.states.items())}
    res = ScenarioResult(cfg, summary, tr, ru, {"snapshots": snaps})
    out = _output_dir(cfg)
    if out is not None:
        tr.to_csv(out / "trajectory.csv")
        res.files = [out / "trajectory.csv"]
        for t, s in snaps.items():
            path = out / f"wigner_t{t:g}.csv"
            wigner(s).to_csv(path)
            res.files.append(path)
        res.files.append(write_summary(out, summary))
    return res


@dataclass
class PassResult:
    """State of the pulse mode after one pass through the Kerr cavity."""

    index: int
    u_state: DensityMatrix
    observables: dict
    diagnostics: dict


class LeakageAbort(IntegrationError):
    """Cumulative Fock-window leakage over the passes exceeded its budget."""

    def __init__(self, message: str, results: list):
        super().__init__(message)
        self.results = results


def default_snapshot_passes(n: int) -> tuple[int, ...]:
    return tuple(sorted({int(round(f * n)) for f in SNAPSHOT_FRACTIONS}))


def iterate_passes(
    setup: Setup,
    u_state: DensityMatrix,
    passes: int,
    snapshot_passes=(),
    leakage_budget: float = LEAKAGE_BUDGET,
    progress=None,
) -> list[PassResult]:
    """Send the pulse-mode state through the cavity ``passes`` times.

    Each pass re-embeds the previous reduced u-mode state with fresh vacuum c and
    v modes and the original pulse shape, i.e. ideal filtering and reshaping.
    Pass 0 is the input. States are kept for ``snapshot_passes`` and the last
    pass; the others keep only their observables.

    Raises:
        LeakageAbort: the summed per-pass edge population exceeds ``leakage_budget``.
    """
    wins = [setup.space.windows[i] for i in range(3)]
    keep = set(snapshot_passes) | {passes}
    obs = setup.observables
    results = [PassResult(0, u_state, _pass_observables(u_state), {"leakage": 0.0, "trace_drift": 0.0})]
    total = 0.0
    state = u_state
    for k in range(1, passes + 1):
        rho0 = product_state(state, _vacuum(wins[1]), _vacuum(wins[2]), labels=LABELS)
        tr = integrate(setup.H, setup.Ls, rho0, setup.grid, obs, sample_every=setup.grid.steps, monitor=setup.monitored)
        state = reduced_density(tr.final, U)
        diag = _diagnostics(tr, setup.mode_matrix)
        total += diag["leakage"]
        diag["cumulative_leakage"] = total
        results.append(
            PassResult(k, state if k in keep else None, {**_pass_observables(state), "n_c": float(tr.real("n_c")[-1]), "n_v": float(tr.real("n_v")[-1])}, diag)
        )
        if progress is not None:
            progress(k, passes)
        if total > leakage_budget:
            raise LeakageAbort(f"cumulative leakage {total:.3g} after pass {k} exceeds {leakage_budget:g}", results)
    return results


def _pass_observables(state: DensityMatrix) -> dict:
    m1, m2, n = mode_moments(state)
    return {"n_u": n, "a": m1, "a2": m2}


def run_cat_multi(cfg: ExperimentConfig, progress=None) -> ScenarioResult:
    """N weak Kerr passes with ideal reshaping in between."""
    setup = build_setup(cfg)
    n = cfg.passes if cfg.passes is not None else pass_count(cfg.kerr, setup.mode_matrix)
    snaps = cfg.snapshot_passes if cfg.snapshot_passes is not None else default_snapshot_passes(n)
    u0 = reduced_density(setup.rho0, U)
    results = iterate_passes(setup, u0, n, snaps, progress=progress)
    final = results[-1].u_state
    alpha_fit, fid = fit_cat(final)
    W = wigner(final)
    summary = {
        "scenario": cfg.scenario,
        "kerr": setup.kerr,
        "passes": n,
        "input_photons": results[0].observables["n_u"],
        "final_u": results[-1].observables["n_u"],
        "cat_alpha": alpha_fit,
        "cat_fidelity": fid,
        "wigner_min": float(W.W.min()),
        "cumulative_leakage": results[-1].diagnostics.get("cumulative_leakage", 0.0),
        "max_trace_drift": max(r.diagnostics["trace_drift"] for r in results),
        "unitarity_residual": setup.mode_matrix.unitarity_residual(),
    }
    res = ScenarioResult(cfg, summary, None, final, {"passes": results, "wigner": W})
    out = _output_dir(cfg)
    if out is not None:
        path = out / "passes.csv"
        with open(path, "w") as fh:
            fh.write("pass,n_u,a_re,a_im,leakage,trace_drift\n")
            for r in results:
                a = r.observables["a"]
                fh.write(
                    f"{r.index},{r.observables['n_u']!r},{a.real!r},{a.imag!r},"
                    f"{r.diagnostics['leakage']!r},{r.diagnostics['trace_drift']!r}\n"
                )
        res.files = [path]
        for r in results:
            if r.u_state is not None and r.index in snaps:
                p = out / f"wigner_pass{r.index}.csv"
                (W if r.index == n else wigner(r.u_state)).to_csv(p)
                res.files.append(p)
        res.files.append(write_summary(out, summary))
    return res


RUNNERS = {
    "rabi": run_rabi,
    "empty_cavity": run_empty_cavity,
    "squeeze": run_squeeze,
    "cat_single": run_cat_single,
    "cat_multi": run_cat_multi,
}


def run(cfg: ExperimentConfig) -> ScenarioResult:
    return RUNNERS[cfg.scenario](cfg)


def _run_summary(cfg: ExperimentConfig) -> dict:
    return run(cfg).summary


def run_sweep(configs, max_workers: int | None = None) -> list[dict]:
    """Run independent configurations in worker processes; summaries in input order.

    Output directories must be distinct so runs never share files.
    """
    configs = list(configs)
    dirs = [c.output_dir for c in configs if c.output_dir is not None]
    if len(set(dirs)) != len(dirs):
        raise ConfigurationError("sweep configurations must use distinct output directories")
    if max_workers == 1 or len(configs) <= 1:
        return [_run_summary(c) for c in configs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_summary, configs))


# -- oracle checks ------------------------------------------------------------------


def frame_equivalence_delta(
    fock_n: int | None = None,
    alpha: complex | None = None,
    window: int | None = None,
    t_end: float = 12.0,
    dt: float = 1e-3,
    general: bool = False,
) -> float:
    """Max ``|<c^dag c>(t)|`` difference between the Schrödinger picture and the two-mode frame.

    A two-level scatterer is driven by a Fock (``fock_n``) or coherent
    (``alpha``) pulse; both pictures share windows large enough to hold the
    whole pulse in either virtual cavity.
    """
    if (fock_n is None) == (alpha is None):
        raise ConfigurationError("give exactly one of fock_n and alpha")
    from .dynamics import cascaded_generator
    from .frames import lambda_two_mode

    grid, sched = _check_schedule(t_end, dt)
    if window is None:
        window = fock_n + 1 if fock_n is not None else int(np.ceil(abs(alpha) ** 2 + 6 * abs(alpha) + 2))
    w = FockWindow(0, window)
    spec = SystemSpec()
    u_state = fock_state(fock_n, w) if fock_n is not None else coherent_state(alpha, w, min_weight=INPUT_MIN_WEIGHT)
    rho0 = product_state(u_state, _vacuum(spec.scatterer), _vacuum(w), labels=LABELS)
    c = mode_operator(rho0.space, C)
    obs = {"n_c": c.dag() @ c}
    ref = integrate(*cascaded_generator(spec, sched, rho0.space), rho0, grid, obs, sample_every=10)
    lam = lambda_two_mode(sched) if general else None
    tr = integrate(*two_mode_generator(spec, sched, rho0.space, lam), rho0, grid, obs, sample_every=10)
    return float(np.max(np.abs(tr["n_c"] - ref["n_c"])))


def _check_schedule(t_end: float = 12.0, dt: float = 1e-3) -> tuple[TimeGrid, CouplingSchedule]:
    grid = TimeGrid.span(0.0, t_end, dt)
    return grid, make_schedule(gaussian_mode(4.0, 1.0, grid.refined(SCHEDULE_REFINEMENT)))


def backflow_max(c_exc: int = 1, v_exc: int = 1, t_end: float = 12.0, dt: float = 1e-3) -> float:
    """Largest ``<a_u^dag a_u>`` reached when only the downstream modes start excited.

    The cascaded coupling must never push excitation back into the vacuum
    input cavity, so the result should sit at round-off level.
    """
    from .dynamics import cascaded_generator

    grid, sched = _check_schedule(t_end, dt)
    spec = SystemSpec()
    w = FockWindow(0, 3)
    rho0 = product_state(_vacuum(w), fock_state(c_exc, spec.scatterer), fock_state(v_exc, w), labels=LABELS)
    au = mode_operator(rho0.space, U)
    tr = integrate(*cascaded_generator(spec, sched, rho0.space), rho0, grid, {"n_u": au.dag() @ au}, sample_every=10)
    return float(np.max(np.abs(tr["n_u"])))


def decay_law_error(beta0: float = 0.05, t_end: float = 12.0, dt: float = 1e-3) -> float:
    """Max relative deviation of ``<a_v>`` from ``beta0 * sqrt(F(t_eps) / F(t))``.

    The output virtual cavity starts in a weak coherent state at the first grid
    point past the regularization time; ``F`` is the cumulative norm of the
    output mode. The amplitude must decay without feeding the scatterer.
    """
    from .dynamics import cascaded_generator

    grid, sched = _check_schedule(t_end, dt)
    spec = SystemSpec()
    sub = grid.starting_at(int(np.ceil(sched.t_eps / grid.dt)))
    w = FockWindow(0, 4)
    rho0 = product_state(_vacuum(FockWindow(0, 1)), _vacuum(spec.scatterer), coherent_state(beta0, w), labels=LABELS)
    av = mode_operator(rho0.space, V)
    tr = integrate(*cascaded_generator(spec, sched, rho0.space), rho0, sub, {"a_v": av}, sample_every=50)
    F = sched.v.cumulative()
    expected = beta0 * np.sqrt(np.interp(sub.t0, sched.grid.times, F) / np.interp(tr.times, sched.grid.times, F))
    return float(np.max(np.abs(tr["a_v"].real / expected - 1)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} (limit {self.limit:g})"


def property_battery(small: bool = False) -> list[CheckResult]:
    """Oracle checks on the frames, the mode matrix and the integrator invariants."""
    from .frames import m21_quartic_integral

    out = []
    cases = [("fock", 1), ("fock", 2)] if small else [("fock", 1), ("fock", 2), ("fock", 3), ("coherent", 1.0)]
    for kind, x in cases:
        if kind == "fock":
            d = frame_equivalence_delta(fock_n=x)
        else:
            d = frame_equivalence_delta(alpha=x)
        out.append(CheckResult(f"frame equivalence, {kind} {x}", d <= 1e-4, d, 1e-4))
    cfg = ExperimentConfig.for_scenario("empty_cavity", small=True)
    setup = build_setup(cfg)
    res = setup.mode_matrix.unitarity_residual()
    out.append(CheckResult("mode matrix unitarity", res <= 1e-8, res, 1e-8))
    integral = m21_quartic_integral(setup.mode_matrix)
    out.append(CheckResult("int |M21|^4 vs 1.180", abs(integral - 1.180) <= 0.02, abs(integral - 1.180), 0.02))
    tr = run_setup(setup)
    out.append(CheckResult("trace drift", tr.trace_drift <= 1e-6, tr.trace_drift, 1e-6))
    out.append(CheckResult("min eigenvalue (negated)", -tr.min_eigenvalue <= 1e-6, -tr.min_eigenvalue, 1e-6))
    n_in = setup.rho0.expect(setup.observables["n_u"]).real
    err = abs(tr.real("n_u")[-1] - n_in)
    out.append(CheckResult("empty-cavity photon number", err <= 1e-4, err, 1e-4))
    back = backflow_max()
    out.append(CheckResult("no backflow into the input cavity", back <= 1e-8, back, 1e-8))
    decay = decay_law_error()
    out.append(CheckResult("instant decay law (relative)", decay <= 1e-3, decay, 1e-3))
    return out
