"""Lindblad master-equation integration and the Schrödinger-picture cascaded model."""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from math import sqrt
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, IntegrationError, LeakageWarning
from .fock import (
    CompositeSpace,
    DensityMatrix,
    FockWindow,
    OperatorMatrix,
    annihilation,
    embed,
    min_eigenvalue,
    mode_operator,
)
from .operators import ConstantOperator, LinearCombination, TimeOperator, as_time_operator
from .pulses import CouplingSchedule, TimeGrid
from .sectors import SectorLayout, block_diag_apply, lowering_apply

TRACE_DRIFT_TOL = 1e-6
LEAKAGE_THRESHOLD = 1e-4
POPULATION_TOL = 1e-3

U, C, V = "u", "c", "v"


@dataclass(frozen=True)
class SystemSpec:
    """The localized scatterer.

    Args:
        scatterer: basis of the scatterer; ``FockWindow(0, 2)`` is a two-level
            atom, larger windows a cavity mode.
        gamma: coupling rate to the travelling field.
        hamiltonian: ``H_s`` on the scatterer alone, either a constant matrix or a
            callable of time. ``None`` means zero.
        losses: extra Lindblad operators on the scatterer (constant matrices).
        lowering: the operator that couples to the field; defaults to the
            ladder operator of ``scatterer``.
    """

    scatterer: FockWindow = FockWindow(0, 2)
    gamma: float = 1.0
    hamiltonian: object = None
    losses: tuple = ()
    lowering: object = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")

    def lowering_matrix(self) -> np.ndarray:
        if self.lowering is None:
            return annihilation(self.scatterer).data
        mat = np.asarray(self.lowering.data if isinstance(self.lowering, OperatorMatrix) else self.lowering)
        if mat.shape != (self.scatterer.size,) * 2:
            raise ConfigurationError("lowering operator does not match scatterer dimension")
        return mat


def cascaded_space(u_window: FockWindow, spec: SystemSpec, v_window: FockWindow) -> CompositeSpace:
    """Composite space ordered (u-mode, scatterer, v-mode)."""
    return CompositeSpace((u_window, spec.scatterer, v_window), (U, C, V))


def scatterer_hamiltonian(spec: SystemSpec, space: CompositeSpace) -> TimeOperator | None:
    h = spec.hamiltonian
    if h is None:
        return None
    idx = space.index(C)
    if callable(h) and not isinstance(h, (np.ndarray, OperatorMatrix)):
        return as_time_operator(lambda t: embed(np.asarray(_matrix(h(t))), space, idx), space)
    return ConstantOperator(embed(_matrix(h), space, idx))


def _matrix(x):
    return x.data if isinstance(x, OperatorMatrix) else np.asarray(x, dtype=complex)


def _lowering(spec: SystemSpec, space: CompositeSpace) -> OperatorMatrix:
    return embed(spec.lowering_matrix(), space, C)


def dissipator(L, rho) -> np.ndarray:
    """``L rho L^dag - (L^dag L rho + rho L^dag L)/2``."""
    L = _matrix(L)
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if L.shape != r.shape:
        raise ConfigurationError(f"operator {L.shape} and state {r.shape} differ in dimension")
    LdL = L.conj().T @ L
    return L @ r @ L.conj().T - 0.5 * (LdL @ r + r @ LdL)


def lindblad_rhs(H, Ls, rho) -> np.ndarray:
    """Full master-equation right-hand side for dense matrices."""
    H = _matrix(H)
    out = -1j * (H @ rho - rho @ H)
    for L in Ls:
        out += dissipator(L, rho)
    return out


def cascaded_hamiltonian_series(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace) -> TimeOperator:
    """Schrödinger-picture Hamiltonian of scatterer plus virtual cavities as a builder."""
    a_u, a_v = mode_operator(space, U), mode_operator(space, V)
    c = _lowering(spec, space)
    sg = sqrt(spec.gamma)
    ops = [a_u.dag() @ c, c.dag() @ a_u, c.dag() @ a_v, a_v.dag() @ c, a_u.dag() @ a_v, a_v.dag() @ a_u]

    def weights(t):
        gu, gv = sched.at(t)
        x = 0.5j * sg * gu
        y = 0.5j * sg * np.conj(gv)
        z = 0.5j * gu * np.conj(gv)
        return (x, np.conj(x), y, np.conj(y), z, np.conj(z))

    coupling = LinearCombination(ops, weights)
    hs = scatterer_hamiltonian(spec, space)
    return coupling if hs is None else coupling + hs


def jump_operator_series(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace) -> TimeOperator:
    """Builder for the single jump operator of the total outgoing field."""
    ops = [_lowering(spec, space), mode_operator(space, U), mode_operator(space, V)]
    sg = sqrt(spec.gamma)

    def weights(t):
        gu, gv = sched.at(t)
        return (sg, np.conj(gu), np.conj(gv))

    return LinearCombination(ops, weights)


def loss_operators(spec: SystemSpec, space: CompositeSpace) -> list[TimeOperator]:
    return [ConstantOperator(embed(_matrix(L), space, C)) for L in spec.losses]


def cascaded_hamiltonian(spec: SystemSpec, sched: CouplingSchedule, t: float, space: CompositeSpace) -> OperatorMatrix:
    return cascaded_hamiltonian_series(spec, sched, space)(t)


def jump_operator_L0(spec: SystemSpec, sched: CouplingSchedule, t: float, space: CompositeSpace) -> OperatorMatrix:
    return jump_operator_series(spec, sched, space)(t)


def cascaded_generator(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace):
    """``(H, [L0, L1, ...])`` builders ready for :func:`integrate`."""
    H = cascaded_hamiltonian_series(spec, sched, space)
    return H, [jump_operator_series(spec, sched, space), *loss_operators(spec, space)]


# -- integration -------------------------------------------------------------


@dataclass
class Trajectory:
    """Sampled output of :func:`integrate`.

    ``observables`` holds complex series keyed by name; ``states`` maps sample
    times to snapshots. ``final`` is always the state at the last grid point.
    """

    times: np.ndarray
    observables: dict[str, np.ndarray]
    final: DensityMatrix
    states: dict[float, DensityMatrix] = field(default_factory=dict)
    trace_drift: float = 0.0
    edge_population: dict[str, float] = field(default_factory=dict)
    min_eigenvalue: float = 0.0
    backend: str = "dense"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]

    def real(self, name: str) -> np.ndarray:
        return self.observables[name].real

    def to_csv(self, path, names: Sequence[str] | None = None):
        names = list(self.observables) if names is None else list(names)
        cols, header = [self.times], ["t"]
        for name in names:
            series = self.observables[name]
            if np.max(np.abs(series.imag), initial=0.0) < 1e-12:
                cols.append(series.real)
                header.append(name)
            else:
                cols.extend([series.real, series.imag])
                header.extend([f"{name}_re", f"{name}_im"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in zip(*cols):
                writer.writerow([repr(float(x)) for x in row])


class _DenseBackend:
    name = "dense"

    def __init__(self, space, H, Ls):
        self.space, self.H, self.Ls = space, H, Ls

    def state(self, rho):
        return np.array(rho, dtype=complex)

    def full(self, x):
        return x

    def operators(self, t):
        H = self.H.dense(t)
        Ls = [L.dense(t) for L in self.Ls]
        heff = H.astype(complex, copy=True)
        for L in Ls:
            heff -= 0.5j * (L.conj().T @ L)
        return heff, Ls

    def rhs(self, ops, rho):
        heff, Ls = ops
        a = heff @ rho
        out = a.conj().T
        out -= a
        out *= 1j
        for L in Ls:
            x = L @ rho
            out += L @ x.conj().T
        return out

    def diagonal_mask(self, mask):
        return mask

    def index_pairs(self, op):
        i, j = np.nonzero(op)
        return i, j, op[i, j]


class _SectorBackend:
    name = "sectors"

    def __init__(self, layout: SectorLayout, H, Ls):
        self.layout, self.H, self.Ls = layout, H, Ls

    def state(self, rho):
        return self.layout.to_padded(rho)

    def full(self, x):
        return self.layout.to_full(x)

    def operators(self, t):
        lay = self.layout
        heff = np.array(self.H.blocks(t, lay, 0), dtype=complex)
        Ls = [L.blocks(t, lay, 1) for L in self.Ls]
        for Lb in Ls:
            heff[1:] -= 0.5j * np.matmul(Lb.conj().transpose(0, 2, 1), Lb)
        return heff, Ls

    def rhs(self, ops, rho):
        heff, Ls = ops
        lay = self.layout
        a = block_diag_apply(heff, rho, lay)
        out = a.conj().T
        out -= a
        out *= 1j
        for Lb in Ls:
            x = lowering_apply(Lb, rho, lay)
            out += lowering_apply(Lb, np.ascontiguousarray(x.conj().T), lay)
        return out

    def diagonal_mask(self, mask):
        return self.layout.padded_vector_mask(mask)

    def index_pairs(self, op):
        i, j = np.nonzero(op)
        pi, pj = self.layout.padded_index[i], self.layout.padded_index[j]
        keep = (pi >= 0) & (pj >= 0)
        return pi[keep], pj[keep], op[i[keep], j[keep]]


def _choose_layout(space, H, Ls, rho0, grid):
    """Return a sector layout if every generator respects excitation number, else None."""
    exc = space.excitations()
    pops = np.abs(np.diag(rho0))
    n_max = int(exc[pops > 0].max()) if np.any(pops > 0) else int(exc.min())
    layout = SectorLayout(space, n_max)
    probe = [grid.t0, grid.t0 + 0.5 * grid.dt, 0.5 * (grid.t0 + grid.t_end), grid.t_end]
    for t in probe:
        h = H.dense(t)
        scale = max(1.0, float(np.abs(h).max(initial=0.0)))
        if layout.violation(h, 0) > 1e-13 * scale:
            return None
        for L in Ls:
            m = L.dense(t)
            if layout.violation(m, 1) > 1e-13 * max(1.0, float(np.abs(m).max(initial=0.0))):
                return None
    return layout


def edge_masks(space: CompositeSpace, monitor, n_max: int | None = None) -> dict[str, np.ndarray]:
    """Basis-state masks for the Fock-window edges that are genuine truncations.

    A top edge is ignored when the total excitation bound ``n_max`` already
    forbids going past it; a bottom edge matters whenever the window is offset.
    """
    occ = space.occupations()
    offsets = np.array([w.offset for w in space.windows])
    masks = {}
    for key in monitor:
        k = space.index(key)
        w = space.windows[k]
        mask = np.zeros(space.dim, dtype=bool)
        reachable = None if n_max is None else n_max - (offsets.sum() - offsets[k])
        if reachable is None or w.top < reachable:
            mask |= occ[:, k] == w.top
        if w.offset > 0:
            mask |= occ[:, k] == w.offset
        if mask.any():
            masks[space.labels[k]] = mask
    return masks


def integrate(
    H,
    Ls,
    rho0: DensityMatrix,
    grid: TimeGrid,
    observables: Mapping[str, OperatorMatrix] | Sequence[OperatorMatrix] = (),
    *,
    sample_every: int = 1,
    snapshots: Sequence[int] = (),
    monitor: Sequence = (),
    leakage_threshold: float = LEAKAGE_THRESHOLD,
    trace_tol: float = TRACE_DRIFT_TOL,
    backend: str = "auto",
    progress: Callable[[int, int], None] | None = None,
) -> Trajectory:
    """Fixed-step RK4 for ``drho/dt = -i[H, rho] + sum_i D[L_i] rho``.

    Args:
        H: Hamiltonian builder (a :class:`TimeOperator`, a callable of time, or a
            constant operator).
        Ls: jump-operator builders.
        rho0: initial state.
        grid: integration grid; builders are evaluated at grid points and midpoints.
        observables: operators whose expectation values are recorded; a sequence
            is keyed ``"o0", "o1", ...``.
        sample_every: record observables every this many steps (plus the last).
        snapshots: step indices at which the full state is stored.
        monitor: subsystems whose Fock-window edges are checked for leakage.
        backend: ``"dense"``, ``"sectors"`` or ``"auto"`` (sectors when every
            generator respects excitation number).

    Raises:
        IntegrationError: trace drifted more than ``trace_tol``.
    """
    space = rho0.space
    H = as_time_operator(H, space)
    Ls = [as_time_operator(L, space) for L in Ls]
    if not isinstance(observables, Mapping):
        observables = {f"o{i}": op for i, op in enumerate(observables)}

    layout = None
    if backend in ("auto", "sectors"):
        layout = _choose_layout(space, H, Ls, rho0.data, grid)
        if layout is None and backend == "sectors":
            raise ConfigurationError("generators do not respect excitation number; use the dense backend")
    elif backend != "dense":
        raise ConfigurationError(f"unknown backend {backend!r}")
    eng = _SectorBackend(layout, H, Ls) if layout is not None else _DenseBackend(space, H, Ls)

    obs_idx = {}
    for name, op in observables.items():
        mat = _matrix(op)
        if mat.shape != (space.dim, space.dim):
            raise ConfigurationError(f"observable {name!r} does not match the state dimension")
        obs_idx[name] = eng.index_pairs(mat)

    n_max = layout.n_max if layout is not None else None
    edges = {k: eng.diagonal_mask(m) for k, m in edge_masks(space, monitor, n_max).items()}

    rho = eng.state(rho0.data)
    diag_idx = np.arange(rho.shape[0])
    dt = grid.dt
    sample_steps = sorted(set(range(0, grid.steps + 1, sample_every)) | {grid.steps})
    sample_set = set(sample_steps)
    snap_set = set(int(s) for s in snapshots)
    times = grid.times[sample_steps]
    series = {name: np.zeros(len(sample_steps), dtype=complex) for name in observables}
    edge_max = {k: 0.0 for k in edges}
    states: dict[float, DensityMatrix] = {}
    drift = 0.0
    warned: set[str] = set()

    def record(step, slot):
        for name, (i, j, vals) in obs_idx.items():
            series[name][slot] = np.dot(vals, rho[j, i])
        diag = rho[diag_idx, diag_idx].real
        for k, mask in edges.items():
            pop = float(diag[mask].sum())
            edge_max[k] = max(edge_max[k], pop)
            if pop > leakage_threshold and k not in warned:
                warned.add(k)
                warnings.warn(
                    f"population {pop:.3g} at the Fock-window edge of {k!r} at t={grid.t0 + step * dt:.4g}",
                    LeakageWarning,
                    stacklevel=3,
                )
        if step in snap_set:
            states[float(grid.t0 + step * dt)] = DensityMatrix(space, eng.full(rho), check=False)

    slot = 0
    record(0, slot)
    slot += 1
    ops_next = eng.operators(grid.t0)
    for step in range(grid.steps):
        t = grid.t0 + step * dt
        ops0 = ops_next
        ops_mid = eng.operators(t + 0.5 * dt)
        ops_next = eng.operators(t + dt)
        k1 = eng.rhs(ops0, rho)
        k2 = eng.rhs(ops_mid, rho + (0.5 * dt) * k1)
        k3 = eng.rhs(ops_mid, rho + (0.5 * dt) * k2)
        k4 = eng.rhs(ops_next, rho + dt * k3)
        k1 += k4
        k2 += k3
        k1 += 2.0 * k2
        rho = rho + (dt / 6.0) * k1
        rho = 0.5 * (rho + rho.conj().T)
        pops = rho[diag_idx, diag_idx].real
        tr = float(np.sum(pops))
        drift = max(drift, abs(tr - 1.0))
        if not -POPULATION_TOL <= pops.min() <= pops.max() <= 1.0 + POPULATION_TOL:
            raise IntegrationError(
                f"populations left [0, 1] at t={t + dt:.6g}; the step is unstable, reduce dt (dt={dt})"
            )
        if drift > trace_tol:
            raise IntegrationError(
                f"trace drifted by {drift:.3g} at t={t + dt:.6g}; reduce the time step (dt={dt})"
            )
        if step + 1 in sample_set:
            record(step + 1, slot)
            slot += 1
        if progress is not None:
            progress(step + 1, grid.steps)

    final_full = eng.full(rho)
    final = DensityMatrix(space, final_full, check=False)
    lam = min_eigenvalue(final_full)
    for snap in states.values():
        lam = min(lam, min_eigenvalue(snap.data))
    return Trajectory(
        times=times,
        observables=series,
        final=final,
        states=states,
        trace_drift=drift,
        edge_population=edge_max,
        min_eigenvalue=lam,
        backend=eng.name,
    )


# -- state snapshots ----------------------------------------------------------

_SNAPSHOT_HEADER = struct.Struct("<Q")


def write_snapshot(path, rho: DensityMatrix | np.ndarray):
    """Binary layout: little-endian uint64 dimension, then dim*dim complex128 row-major."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    n = data.shape[0]
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(n))
        fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())


def read_snapshot(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = _SNAPSHOT_HEADER.unpack(fh.read(_SNAPSHOT_HEADER.size))
        buf = fh.read()
    if len(buf) != 16 * n * n:
        raise ConfigurationError(f"snapshot {path} truncated: expected {16 * n * n} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<c16").reshape(n, n).copy()
