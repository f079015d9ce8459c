"""Single-mode diagnostics: reduced states, quadratures, Wigner functions, fidelities.

Quadratures follow ``x = (a + a^dag)/sqrt(2)``, ``p = i(a^dag - a)/sqrt(2)`` so a
coherent state has variance 0.5 in every direction.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from math import pi

import numpy as np
from scipy import optimize

from .errors import AccuracyWarning, ConfigurationError
from .fock import CompositeSpace, DensityMatrix, FockWindow, annihilation, coherent_amplitudes
from .pulses import ModeFunction

EDGE_WEIGHT_TOL = 1e-4
SCAN_STEP = 1e-3
PHI_TOL = 1e-5


def reduced_density(rho: DensityMatrix, keep) -> DensityMatrix:
    """Partial trace of ``rho`` over every subsystem except ``keep`` (index or label)."""
    space = rho.space
    k = space.index(keep)
    dims = space.dims
    n = len(dims)
    t = rho.data.reshape(dims + dims)
    # move the kept axes to the front, then trace out the rest pairwise
    t = np.moveaxis(t, (k, n + k), (0, 1))
    rest = int(np.prod([d for i, d in enumerate(dims) if i != k]))
    t = t.reshape(dims[k], dims[k], rest, rest)
    red = np.einsum("abjj->ab", t)
    label = (space.labels[k],) if space.labels else ()
    return DensityMatrix(CompositeSpace([space.windows[k]], labels=label), red)


def _single_window(rho: DensityMatrix) -> FockWindow:
    if len(rho.space.windows) != 1:
        raise ConfigurationError("expected a single-mode state")
    return rho.space.windows[0]


def mode_moments(rho: DensityMatrix) -> tuple[complex, complex, float]:
    """``(<a>, <a^2>, <a^dag a>)`` of a single-mode state."""
    w = _single_window(rho)
    a = annihilation(w).data
    r = rho.data
    m1 = np.sum(a * r.T)
    m2 = np.sum((a @ a) * r.T)
    n = float(np.real(np.sum(w.numbers * np.diag(r))))
    return complex(m1), complex(m2), n


def _variance_curve(moments, phi):
    m1, m2, n = moments
    # cos(phi) x - sin(phi) p = (e^{i phi} a + e^{-i phi} a^dag) / sqrt(2), with [a, a^dag] = 1
    return n - abs(m1) ** 2 + 0.5 + np.real(np.exp(2j * np.asarray(phi)) * (m2 - m1 * m1))


def quadrature_variance(rho_mode: DensityMatrix, phi) -> float | np.ndarray:
    """``Var(cos(phi) x - sin(phi) p)``; ``phi`` may be an array."""
    out = _variance_curve(mode_moments(rho_mode), phi)
    return float(out) if np.ndim(out) == 0 else out


def variance_scan(rho_mode: DensityMatrix, step: float = SCAN_STEP) -> tuple[np.ndarray, np.ndarray]:
    phi = np.arange(0.0, pi, step)
    return phi, _variance_curve(mode_moments(rho_mode), phi)


def min_variance(rho_mode: DensityMatrix, step: float = SCAN_STEP, tol: float = PHI_TOL) -> tuple[float, float]:
    """Angle in ``[0, pi)`` minimizing the quadrature variance and the minimum.

    A scan at ``step`` resolution locates the basin and golden-section search
    refines it to ``tol``. A flat landscape returns ``phi = 0``.
    """
    moments = mode_moments(rho_mode)
    phi, var = variance_scan(rho_mode, step)
    if np.ptp(var) < 1e-12:
        return 0.0, float(var[0])
    i = int(np.argmin(var))
    f = lambda x: float(_variance_curve(moments, x))
    lo, hi = phi[i] - step, phi[i] + step
    res = optimize.minimize_scalar(f, bracket=(lo, phi[i], hi), method="golden", tol=tol / max(abs(phi[i]), 1.0))
    best = float(res.x) % pi
    return best, f(best)


# -- Wigner function ------------------------------------------------------------------


@dataclass(frozen=True)
class WignerField:
    x: np.ndarray
    p: np.ndarray
    W: np.ndarray  # W[i, j] at (x[i], p[j])

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.W, self.p, axis=1), self.x))

    def value_at(self, x: float, p: float) -> float:
        i = int(np.argmin(np.abs(self.x - x)))
        j = int(np.argmin(np.abs(self.p - p)))
        return float(self.W[i, j])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "p", "W"])
            for i, xv in enumerate(self.x):
                for j, pv in enumerate(self.p):
                    writer.writerow([repr(float(xv)), repr(float(pv)), repr(float(self.W[i, j]))])


def default_axis(extent: float = 6.0, points: int = 121) -> np.ndarray:
    return np.linspace(-extent, extent, points)


def _edge_weight(rho: DensityMatrix) -> float:
    """Population of the top Fock state, plus the bottom one for offset windows."""
    w = _single_window(rho)
    diag = np.real(np.diag(rho.data))
    edge = diag[-1]
    if w.offset > 0 and w.size > 1:
        edge += diag[0]
    return float(edge)


def wigner(rho_mode: DensityMatrix, xvec=None, pvec=None, buffer: int | None = None) -> WignerField:
    """Wigner function by displaced parity, ``W(x, p) = tr[D^dag rho D Pi] / pi``.

    The prefactor is ``1/pi`` (not ``2/pi``) because ``W`` is normalized over
    ``dx dp`` rather than over the complex ``alpha`` plane.

    ``D(alpha)`` with ``alpha = s e^{i th} = (x + i p)/sqrt(2)`` is built in an
    enlarged Fock buffer (``buffer`` states) from the eigen-decomposition of
    ``p``. Writing ``D(alpha) = R D(s) R^dag`` with ``R = exp(i th n)`` and using
    that parity commutes with ``R``, ``W = (1/pi) sum rho_mk e^{-i th (m-k)}
    G_km(s)`` with ``G(s) = D(s) Pi D(s)^dag`` needed once per radius.

    Raises:
        AccuracyWarning: the state carries more than 1e-4 weight at its
            truncation edges.
    """
    xvec = default_axis() if xvec is None else np.asarray(xvec, dtype=float)
    pvec = default_axis() if pvec is None else np.asarray(pvec, dtype=float)
    win = _single_window(rho_mode)
    edge = _edge_weight(rho_mode)
    if edge > EDGE_WEIGHT_TOL:
        warnings.warn(f"state weight {edge:.2e} near the truncation edge; Wigner function may be inaccurate", AccuracyWarning, stacklevel=2)
    top = win.offset + win.size
    amax = np.hypot(np.abs(xvec).max(), np.abs(pvec).max()) / np.sqrt(2)
    if buffer is None:
        buffer = int(top + 4 * amax**2 + 12 * amax * np.sqrt(top + 1) + 40)
    nb = max(buffer, top + 1)
    a = annihilation(FockWindow(0, nb)).data
    # D(s) = exp(s (a^dag - a)) = exp(-i sqrt(2) s p)
    pq = 1j * (a.conj().T - a) / np.sqrt(2)
    xi, V = np.linalg.eigh(pq)
    rows = V[win.offset : top]
    # parity maps the p eigenvector of xi_k to that of -xi_k (reversed order) up to a sign
    parity = (-1.0) ** np.arange(nb)
    sign = np.real(np.sum(V[:, ::-1].conj() * (parity[:, None] * V), axis=0))
    X, P = np.meshgrid(xvec, pvec, indexing="ij")
    alpha = (X + 1j * P) / np.sqrt(2)
    radius = np.round(np.abs(alpha), 12)
    theta = np.angle(alpha)
    numbers = win.numbers
    diff = numbers[:, None] - numbers[None, :]
    r = rho_mode.data
    W = np.empty(alpha.shape)
    uniq, inverse = np.unique(radius.ravel(), return_inverse=True)
    inverse = inverse.reshape(radius.shape)
    for u_idx, s in enumerate(uniq):
        B = rows * np.exp(-1j * np.sqrt(2) * s * xi)
        G = (B[:, ::-1] * sign) @ B.conj().T  # G[k, m] = <k| D Pi D^dag |m>
        weights = r * G.T  # rho_mk G_km
        mask = inverse == u_idx
        for th, idx in zip(theta[mask], zip(*np.nonzero(mask))):
            W[idx] = (1 / pi) * np.real(np.sum(weights * np.exp(-1j * th * diff)))
    return WignerField(xvec, pvec, W)


# -- states and fidelities ------------------------------------------------------------------


def state_fidelity(rho: DensityMatrix, target) -> float:
    """``<target|rho|target>`` for a pure target vector."""
    psi = np.asarray(target, dtype=complex).ravel()
    if psi.shape[0] != rho.space.dim:
        raise ConfigurationError(f"target has dimension {psi.shape[0]}, state {rho.space.dim}")
    return float(np.clip(np.real(psi.conj() @ rho.data @ psi), 0.0, 1.0))


def yurke_stoler_cat(alpha: complex, window: FockWindow) -> np.ndarray:
    """``(|alpha> + i|-alpha>)/norm`` restricted to ``window`` and renormalized."""
    plus, _ = coherent_amplitudes(alpha, window)
    minus, _ = coherent_amplitudes(-alpha, window)
    vec = plus + 1j * minus
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise ConfigurationError("cat state has no weight in the window")
    return vec / nrm


def fit_cat(rho_mode: DensityMatrix) -> tuple[complex, float]:
    """Best Yurke-Stoler amplitude for a single-mode state and its fidelity.

    Starting points come from the mean field: ``sqrt(<a^2>)`` (both signs) and
    ``sqrt(<n>)`` along its phase; the fidelity is then maximized over complex
    ``alpha``.
    """
    win = _single_window(rho_mode)
    _, m2, n = mode_moments(rho_mode)
    root = np.sqrt(m2) if abs(m2) > 0 else np.sqrt(max(n, 1e-12))
    starts = [root, -root, np.sqrt(n) * np.exp(1j * np.angle(root)), -np.sqrt(n) * np.exp(1j * np.angle(root))]

    def loss(v):
        return -state_fidelity(rho_mode, yurke_stoler_cat(complex(v[0], v[1]), win))

    best = None
    for z in starts:
        res = optimize.minimize(loss, [z.real, z.imag], method="Nelder-Mead", options={"xatol": 1e-7, "fatol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    return complex(best.x[0], best.x[1]), -float(best.fun)


def mode_overlap(a: ModeFunction, b: ModeFunction) -> complex:
    """Discrete inner product ``sum a^* b dt``."""
    ga, gb = a.grid, b.grid
    if len(ga) != len(gb) or abs(ga.dt - gb.dt) > 1e-12 * ga.dt or abs(ga.t0 - gb.t0) > 1e-9:
        raise ConfigurationError("mode functions live on different grids")
    return complex(np.sum(np.conj(a.samples) * b.samples) * ga.dt)


def write_variance_scan(path, phi, var):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phi", "var"])
        for f, v in zip(phi, var):
            writer.writerow([repr(float(f)), repr(float(v))])
