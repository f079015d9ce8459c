"""Interaction pictures that absorb the linear transfer between pulse modes.

In a frame generated by a quadratic Hamiltonian the mode operators evolve
linearly, ``phi(t) = M(t) phi(0)``, so every transformed Hamiltonian or jump
operator is the Schrödinger-picture expression with ``a_u, c, a_v`` replaced by
rows of ``M`` applied to the bare operators. Nothing here builds the frame
unitary itself; observables are mapped back the same way.

Two frames are provided:

* two-mode: only the u/v virtual cavities are rotated (beam splitter with angle
  ``lam``); for identical input and output modes ``lam = -theta``.
* three-mode: u, the scatterer cavity and v are rotated together by the 3x3
  ``M(t)``; used for the Kerr cavity.
"""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from math import pi, sqrt

import numpy as np
from scipy.linalg import expm

from .dynamics import C, U, V, SystemSpec, _lowering, loss_operators, scatterer_hamiltonian
from .errors import ConfigurationError, IntegrationError
from .fock import CompositeSpace, OperatorMatrix, mode_operator
from .operators import KerrOperator, LinearCombination, TimeOperator
from .pulses import CouplingSchedule, TimeGrid, half_product_integral, sample_at

UNITARITY_TOL = 1e-8
PASS_OVERFLOW = sys.maxsize


@dataclass(frozen=True, eq=False)
class ModeMatrix:
    """``M(t)`` sampled on a uniform grid, shape ``(len(grid), k, k)``."""

    grid: TimeGrid
    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=complex)
        if M.ndim != 3 or M.shape[0] != len(self.grid) or M.shape[1] != M.shape[2]:
            raise ConfigurationError(f"mode matrix array has shape {M.shape}")
        M.flags.writeable = False
        object.__setattr__(self, "M", M)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t: float) -> np.ndarray:
        return sample_at(self.grid, self.M, t)

    def unitarity_residual(self) -> float:
        k = self.M.shape[1]
        gram = np.einsum("tji,tjk->tik", self.M.conj(), self.M)
        return float(np.max(np.abs(gram - np.eye(k))))

    def to_csv(self, path):
        k = self.M.shape[1]
        header = ["t"]
        for i in range(k):
            for j in range(k):
                header += [f"M{i + 1}{j + 1}_re", f"M{i + 1}{j + 1}_im"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, m in zip(self.times, self.M):
                flat = m.ravel()
                row = [repr(float(t))]
                for z in flat:
                    row += [repr(float(z.real)), repr(float(z.imag))]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ModeMatrix":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        k = int(round(sqrt((data.shape[1] - 1) / 2)))
        vals = data[:, 1::2] + 1j * data[:, 2::2]
        grid = TimeGrid(float(t[0]), float(t[1] - t[0]), len(t) - 1)
        return cls(grid, vals.reshape(len(t), k, k))


@dataclass(frozen=True)
class FramePlan:
    """Which interaction picture a run uses and the data defining it."""

    kind: str
    schedule: CouplingSchedule
    mode_matrix: ModeMatrix | None = None
    lam: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("two-mode", "three-mode"):
            raise ConfigurationError(f"unknown frame kind {self.kind!r}")
        if self.kind == "three-mode" and self.mode_matrix is None:
            raise ConfigurationError("three-mode frame needs a mode matrix")
        if self.kind == "two-mode" and self.lam is None:
            raise ConfigurationError("two-mode frame needs the beam-splitter angle")


# -- two-mode frame -------------------------------------------------------------


def lambda_two_mode(sched: CouplingSchedule) -> np.ndarray:
    """Running integral of ``g_u g_v^* / 2``."""
    return half_product_integral(sched.g_u, sched.g_v, sched.grid.dt)


def beam_splitter(lam: complex) -> np.ndarray:
    """2x2 map ``(a_u, a_v)_I = B (a_u, a_v)`` for ``exp(lam a_u^dag a_v - h.c.)``.

    Real ``lam`` gives ``[[cos, sin], [-sin, cos]]``.
    """
    r = abs(lam)
    ph = lam / r if r > 0 else 1.0
    return np.array([[np.cos(r), ph * np.sin(r)], [-np.conj(ph) * np.sin(r), np.cos(r)]], dtype=complex)


def _two_mode_ops(space: CompositeSpace, spec: SystemSpec):
    a_u, a_v = mode_operator(space, U), mode_operator(space, V)
    c = _lowering(spec, space)
    return a_u, c, a_v


def _general_two_mode_weights(sched: CouplingSchedule, bs, sg: float):
    def h_weights(t):
        gu, gv = sched.at(t)
        B = bs(t)
        x = 0.5j * sg * (gu * np.conj(B[0, 0]) - gv * np.conj(B[1, 0]))
        y = 0.5j * sg * (gu * np.conj(B[0, 1]) - gv * np.conj(B[1, 1]))
        return (x, np.conj(x), y, np.conj(y))

    def l_weights(t):
        gu, gv = sched.at(t)
        B = bs(t)
        gu_, gv_ = np.conj(gu), np.conj(gv)
        return (sg, gu_ * B[0, 0] + gv_ * B[1, 0], gu_ * B[0, 1] + gv_ * B[1, 1])

    return h_weights, l_weights


def _regularized_ratio(num: float, den: float, floor: float) -> float:
    return num / den if abs(den) >= floor else 0.0


def identical_mode_coefficients(sched: CouplingSchedule, t: float) -> tuple[float, float, float]:
    """``(u, u(cot - tan), u(tan + cot))`` at ``t`` for a real pulse with ``v = u``.

    Both quotients are dropped where their denominator is below ``sqrt(epsilon)``,
    the same region in which the virtual-cavity couplings are switched off.
    """
    u = sched.u_at(t).real
    th = sched.theta_at(t)
    s, c = np.sin(th), np.cos(th)
    floor = sqrt(sched.epsilon)
    cot = _regularized_ratio(u * c, s, floor)
    tan = _regularized_ratio(u * s, c, floor)
    return u, cot - tan, tan + cot


def _check_identical(sched: CouplingSchedule):
    if not sched.identical_modes:
        raise ConfigurationError("the identical-mode frame requires v = u")
    if np.max(np.abs(sched.u.samples.imag)) > 1e-12:
        raise ConfigurationError("the identical-mode frame requires a real pulse; pass lam for the general form")


def two_mode_hamiltonian_series(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace, lam=None) -> TimeOperator:
    """Two-mode interaction-picture Hamiltonian builder.

    Without ``lam`` the identical-mode form is used: a Jaynes-Cummings coupling
    ``sqrt(gamma) u(t)`` to the pulse mode plus the ancilla coupling
    ``sqrt(gamma) u (cot - tan) / 2``. With ``lam`` (array on the schedule grid)
    the general beam-splitter transform is applied.
    """
    a_u, c, a_v = _two_mode_ops(space, spec)
    sg = sqrt(spec.gamma)
    ops = [a_u.dag() @ c, c.dag() @ a_u, a_v.dag() @ c, c.dag() @ a_v]
    if lam is None:
        _check_identical(sched)

        def weights(t):
            u, anc, _ = identical_mode_coefficients(sched, t)
            x = 1j * sg * u
            y = 0.5j * sg * anc
            return (x, -x, y, -y)

    else:
        lam = np.asarray(lam, dtype=complex)
        weights, _ = _general_two_mode_weights(sched, lambda t: beam_splitter(sample_at(sched.grid, lam, t)), sg)
    coupling = LinearCombination(ops, weights)
    hs = scatterer_hamiltonian(spec, space)
    return coupling if hs is None else coupling + hs


def two_mode_jump_series(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace, lam=None) -> TimeOperator:
    a_u, c, a_v = _two_mode_ops(space, spec)
    sg = sqrt(spec.gamma)
    if lam is None:
        _check_identical(sched)

        def weights(t):
            _, _, anc = identical_mode_coefficients(sched, t)
            return (sg, -anc)

        return LinearCombination([c, a_v], weights)
    lam = np.asarray(lam, dtype=complex)
    _, weights = _general_two_mode_weights(sched, lambda t: beam_splitter(sample_at(sched.grid, lam, t)), sg)
    return LinearCombination([c, a_u, a_v], weights)


def two_mode_hamiltonian(spec, sched, lam, t, space) -> OperatorMatrix:
    return two_mode_hamiltonian_series(spec, sched, space, lam)(t)


def two_mode_jump_operator(spec, sched, t, space, lam=None) -> OperatorMatrix:
    return two_mode_jump_series(spec, sched, space, lam)(t)


def two_mode_generator(spec: SystemSpec, sched: CouplingSchedule, space: CompositeSpace, lam=None):
    H = two_mode_hamiltonian_series(spec, sched, space, lam)
    return H, [two_mode_jump_series(spec, sched, space, lam), *loss_operators(spec, space)]


def two_mode_back_transform(lam: complex, space: CompositeSpace) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Schrödinger-picture ``a_u, a_v`` expressed as operators on the frame state."""
    B = beam_splitter(lam)
    a_u, a_v = mode_operator(space, U), mode_operator(space, V)
    return B[0, 0] * a_u + B[0, 1] * a_v, B[1, 0] * a_u + B[1, 1] * a_v


# -- mode matrices -----------------------------------------------------------------


def coefficient_matrix(g_u: complex, g_v: complex, gamma: float) -> np.ndarray:
    """Anti-Hermitian generator of ``dM/dt = F M`` for the (u, c, v) frame."""
    sg = sqrt(gamma)
    gu, gv = complex(g_u), complex(g_v)
    return 0.5 * np.array(
        [
            [0, sg * gu, gu * np.conj(gv)],
            [-sg * np.conj(gu), 0, sg * np.conj(gv)],
            [-np.conj(gu) * gv, -sg * gv, 0],
        ],
        dtype=complex,
    )


def _two_mode_coefficient(g_u, g_v, gamma=None):
    z = 0.5 * complex(g_u) * np.conj(complex(g_v))
    return np.array([[0, z], [-np.conj(z), 0]], dtype=complex)


def _propagate(F, grid: TimeGrid, n: int, method: str) -> ModeMatrix:
    """Integrate ``dM/dt = F(i) M`` with steps spanning two schedule samples."""
    if grid.steps % 2:
        raise ConfigurationError("the schedule grid needs an even number of steps")
    h = 2 * grid.dt
    nsteps = grid.steps // 2
    out = np.empty((nsteps + 1, n, n), dtype=complex)
    M = np.eye(n, dtype=complex)
    out[0] = M
    f_next = F(0)
    for k in range(nsteps):
        f0, f1, f2 = f_next, F(2 * k + 1), F(2 * k + 2)
        f_next = f2
        if method == "magnus4":
            omega = (h / 6.0) * (f0 + 4.0 * f1 + f2) + (h * h / 12.0) * (f2 @ f0 - f0 @ f2)
            M = expm(omega) @ M
        elif method == "rk4":
            k1 = f0 @ M
            k2 = f1 @ (M + 0.5 * h * k1)
            k3 = f1 @ (M + 0.5 * h * k2)
            k4 = f2 @ (M + h * k3)
            M = M + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            raise ConfigurationError(f"unknown method {method!r}")
        out[k + 1] = M
    return ModeMatrix(TimeGrid(grid.t0, h, nsteps), out)


def mode_matrix_three(sched: CouplingSchedule, gamma: float, method: str = "magnus4", tol: float = UNITARITY_TOL) -> ModeMatrix:
    """Solve ``dM/dt = F(t) M``, ``M(t0) = I``, for the (u, c, v) modes.

    The result lives on a grid with twice the schedule spacing, since each step
    uses the schedule sample at its midpoint. ``method="magnus4"`` (default)
    takes exponential steps with a fourth-order Magnus generator and is unitary
    to round-off; ``"rk4"`` is the classic Runge-Kutta step.

    Raises:
        IntegrationError: ``max |M^dag M - I|`` exceeds ``tol``.
    """
    gu, gv = sched.g_u, sched.g_v
    mm = _propagate(lambda i: coefficient_matrix(gu[i], gv[i], gamma), sched.grid, 3, method)
    res = mm.unitarity_residual()
    if res > tol:
        raise IntegrationError(f"mode matrix unitarity drift {res:.3g} exceeds {tol:.1e}; refine the schedule grid")
    return mm


def mode_matrix_two(sched: CouplingSchedule, method: str = "magnus4", tol: float = UNITARITY_TOL) -> ModeMatrix:
    """2x2 mode matrix of the u/v beam splitter (the three-mode problem at gamma = 0)."""
    gu, gv = sched.g_u, sched.g_v
    mm = _propagate(lambda i: _two_mode_coefficient(gu[i], gv[i]), sched.grid, 2, method)
    res = mm.unitarity_residual()
    if res > tol:
        raise IntegrationError(f"mode matrix unitarity drift {res:.3g} exceeds {tol:.1e}")
    return mm


# -- three-mode frame ----------------------------------------------------------------


def _frame_modes(space: CompositeSpace, labels) -> list[OperatorMatrix]:
    return [mode_operator(space, lab) for lab in labels]


def transform_mode_operator(row: int, M_t: np.ndarray, space: CompositeSpace, labels=None) -> OperatorMatrix:
    """Interaction-picture mode ``sum_j M[row, j] phi_j(0)``; ``row`` counts from 1."""
    M_t = np.asarray(M_t)
    k = M_t.shape[0]
    if labels is None:
        labels = (U, C, V) if k == 3 else (U, V)
    if not 1 <= row <= k:
        raise ConfigurationError(f"row must be in 1..{k}, got {row}")
    modes = _frame_modes(space, labels)
    out = M_t[row - 1, 0] * modes[0]
    for j in range(1, k):
        out = out + M_t[row - 1, j] * modes[j]
    return out


def transformed_mode_series(row: int, mm: ModeMatrix, space: CompositeSpace) -> LinearCombination:
    return LinearCombination(_frame_modes(space, (U, C, V)), lambda t: mm.at(t)[row - 1])


def three_mode_hamiltonian_kerr(K: float, M_t: np.ndarray, space: CompositeSpace, t: float | None = None) -> OperatorMatrix:
    """``K (c(t)^dag c(t))^2`` with ``c(t)`` the second row of ``M_t``."""
    c = transform_mode_operator(2, M_t, space)
    n = c.dag() @ c
    return float(K) * (n @ n)


def three_mode_kerr_series(K: float, mm: ModeMatrix, space: CompositeSpace) -> KerrOperator:
    return KerrOperator(K, transformed_mode_series(2, mm, space))


def jump_weights_three(sched: CouplingSchedule, M_t: np.ndarray, gamma: float, t: float) -> np.ndarray:
    gu, gv = sched.at(t)
    return sqrt(gamma) * M_t[1] + np.conj(gu) * M_t[0] + np.conj(gv) * M_t[2]


def three_mode_jump_operator(spec: SystemSpec, sched: CouplingSchedule, M_t, space: CompositeSpace, t: float) -> OperatorMatrix:
    w = jump_weights_three(sched, np.asarray(M_t), spec.gamma, t)
    modes = _frame_modes(space, (U, C, V))
    return w[0] * modes[0] + w[1] * modes[1] + w[2] * modes[2]


def three_mode_jump_series(gamma: float, sched: CouplingSchedule, mm: ModeMatrix, space: CompositeSpace) -> LinearCombination:
    return LinearCombination(
        _frame_modes(space, (U, C, V)), lambda t: jump_weights_three(sched, mm.at(t), gamma, t)
    )


def three_mode_generator(gamma: float, kerr: float, sched: CouplingSchedule, mm: ModeMatrix, space: CompositeSpace):
    """``(H, [L0])`` for a Kerr cavity scatterer in the three-mode frame."""
    L0 = three_mode_jump_series(gamma, sched, mm, space)
    if kerr == 0:
        H = LinearCombination([OperatorMatrix(space, np.zeros((space.dim, space.dim)))], lambda t: (0.0,))
    else:
        H = three_mode_kerr_series(kerr, mm, space)
    return H, [L0]


# -- cat condition ------------------------------------------------------------------


def m21_quartic_integral(mm: ModeMatrix, T: float | None = None) -> float:
    """``int_0^T |M_21|^4 dt`` by the trapezoid rule."""
    t = mm.times
    y = np.abs(mm.M[:, 1, 0]) ** 4
    if T is not None:
        keep = t <= T + 1e-12
        t, y = t[keep], y[keep]
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def analytic_cat_phase(K: float, mm: ModeMatrix, T: float | None = None) -> float:
    """Kerr phase ``K int |M_21|^4`` accumulated by the pulse mode in one pass."""
    return float(K) * m21_quartic_integral(mm, T)


def single_pass_kerr(mm: ModeMatrix, T: float | None = None) -> float:
    """Kerr strength for which one pass gives the even/odd phase difference pi/2."""
    return (pi / 2) / m21_quartic_integral(mm, T)


def passes_required(K: float, mm: ModeMatrix, T: float | None = None) -> float:
    """Real-valued pass count ``N`` with ``N K int |M_21|^4 = pi/2`` (``inf`` for K = 0)."""
    phase = analytic_cat_phase(K, mm, T)
    return float("inf") if phase == 0 else (pi / 2) / phase


def pass_count(K: float, mm: ModeMatrix, T: float | None = None) -> int:
    """Nearest whole number of passes; ``PASS_OVERFLOW`` when no finite count exists."""
    n = passes_required(K, mm, T)
    return PASS_OVERFLOW if not np.isfinite(n) or n > PASS_OVERFLOW else int(round(n))
