"""Pulse mode functions and the virtual-cavity coupling schedules built from them.

Time is measured in units of 1/gamma throughout. Cumulative integrals use the
trapezoid rule on the uniform grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import erf, pi, sqrt

import numpy as np
from scipy import special

from .errors import ConfigurationError, TruncationError

NORM_TOL = 1e-6
DEFAULT_EPSILON = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"time step must be positive, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ConfigurationError(f"a time grid needs at least 2 steps, got {self.steps}")

    @classmethod
    def span(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        steps = int(round((t1 - t0) / dt))
        if abs(t0 + steps * dt - t1) > 1e-9 * max(1.0, abs(t1)):
            raise ConfigurationError(f"interval [{t0}, {t1}] is not a whole number of steps {dt}")
        return cls(float(t0), float(dt), steps)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.steps

    def __len__(self):
        return self.steps + 1

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.dt / factor, self.steps * factor)

    def starting_at(self, index: int) -> "TimeGrid":
        return TimeGrid(self.t0 + index * self.dt, self.dt, self.steps - index)

    def locate(self, t: float) -> tuple[int, float]:
        """Return ``(i, frac)`` with ``t = t_i + frac*dt``; ``frac == 0`` on grid points."""
        x = (t - self.t0) / self.dt
        i = int(round(x))
        if abs(x - i) < 1e-7:
            frac = 0.0
        else:
            i = int(np.floor(x))
            frac = x - i
        if i < 0 or i > self.steps or (i == self.steps and frac > 0):
            raise ConfigurationError(f"time {t} outside grid [{self.t0}, {self.t_end}]")
        return i, frac


def sample_at(grid: TimeGrid, values: np.ndarray, t: float):
    """Sampled value at ``t``; linear interpolation between grid points."""
    i, frac = grid.locate(t)
    if frac == 0.0:
        return values[i]
    return (1 - frac) * values[i] + frac * values[i + 1]


def cumulative_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid running integral starting at 0."""
    out = np.zeros(len(values), dtype=np.result_type(values, float))
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


def trapezoid(values: np.ndarray, dt: float):
    return cumulative_integral(values, dt)[-1]


@dataclass(frozen=True, eq=False)
class ModeFunction:
    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=complex)
        if s.shape != (len(self.grid),):
            raise ConfigurationError(f"{s.shape[0]} samples do not match grid of {len(self.grid)} points")
        if not np.all(np.isfinite(s)):
            raise ConfigurationError("mode function has non-finite samples")
        norm = self.norm_of(s, self.grid.dt)
        if abs(norm - 1.0) > NORM_TOL:
            raise ConfigurationError(f"mode function norm {norm:.9f} is not 1 within {NORM_TOL}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @staticmethod
    def norm_of(samples, dt) -> float:
        return float(trapezoid(np.abs(samples) ** 2, dt))

    @classmethod
    def normalized(cls, grid: TimeGrid, samples) -> "ModeFunction":
        samples = np.asarray(samples, dtype=complex)
        return cls(grid, samples / sqrt(cls.norm_of(samples, grid.dt)))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t: float) -> complex:
        return complex(sample_at(self.grid, self.samples, t))

    def cumulative(self) -> np.ndarray:
        """Running weight ``int_0^t |u|^2``."""
        return cumulative_integral(np.abs(self.samples) ** 2, self.grid.dt)

    def remaining(self) -> np.ndarray:
        """Weight still to come, ``int_t^T |u|^2``, accumulated from the far end."""
        w = np.abs(self.samples[::-1]) ** 2
        return cumulative_integral(w, self.grid.dt)[::-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "re", "im"])
            for t, s in zip(self.times, self.samples):
                writer.writerow([repr(float(t)), repr(float(s.real)), repr(float(s.imag))])

    @classmethod
    def from_csv(cls, path) -> "ModeFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        if len(t) < 3:
            raise ConfigurationError("mode file needs at least 3 samples")
        dt = float(t[1] - t[0])
        if np.max(np.abs(np.diff(t) - dt)) > 1e-9 * max(1.0, abs(dt)):
            raise ConfigurationError("mode file time column is not uniformly spaced")
        grid = TimeGrid(float(t[0]), dt, len(t) - 1)
        return cls(grid, data[:, 1] + 1j * data[:, 2])


def gaussian_mode(t_p: float, tau: float, grid: TimeGrid, min_norm: float = 1 - 1e-7) -> ModeFunction:
    """Normalized Gaussian envelope centred at ``t_p`` with width ``tau``."""
    if tau <= 0:
        raise ConfigurationError("pulse width must be positive")
    captured = 0.5 * (erf((grid.t_end - t_p) / tau) - erf((grid.t0 - t_p) / tau))
    if grid.t0 > t_p - 4 * tau or grid.t_end < t_p + 4 * tau or captured < min_norm:
        raise TruncationError(
            f"grid [{grid.t0}, {grid.t_end}] does not span the pulse [t_p-4tau, t_p+4tau]", captured
        )
    t = grid.times
    u = np.exp(-((t - t_p) ** 2) / (2 * tau**2)) / (sqrt(tau) * pi**0.25)
    return ModeFunction.normalized(grid, u)


def coupling_gu(u: ModeFunction, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Out-coupling of the upstream virtual cavity that releases ``u``.

    Zero wherever less than ``epsilon`` of the pulse remains to be emitted.
    """
    rest = u.remaining()
    out = np.zeros(len(rest), dtype=complex)
    ok = rest >= epsilon
    out[ok] = np.conj(u.samples[ok]) / np.sqrt(rest[ok])
    return out


def coupling_gv(v: ModeFunction, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """In-coupling of the downstream filter cavity that captures ``v``.

    Zero until ``epsilon`` of the mode has arrived.
    """
    got = v.cumulative()
    out = np.zeros(len(got), dtype=complex)
    ok = got >= epsilon
    out[ok] = -np.conj(v.samples[ok]) / np.sqrt(got[ok])
    return out


def theta_schedule(u: ModeFunction) -> np.ndarray:
    """Mixing angle with ``sin^2(theta) = int_0^t |u|^2``, clamped to [0, pi/2]."""
    return np.arcsin(np.sqrt(np.clip(u.cumulative(), 0.0, 1.0)))


def gaussian_theta(t, t_p: float, tau: float) -> np.ndarray:
    """Closed-form mixing angle of a Gaussian pulse that starts at t = 0."""
    s = 0.5 * (special.erf((np.asarray(t) - t_p) / tau) + special.erf(t_p / tau))
    return np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def half_product_integral(g_u: np.ndarray, g_v: np.ndarray, dt: float) -> np.ndarray:
    """Running integral of ``g_u g_v^* / 2``; the beam-splitter angle between the virtual cavities."""
    return cumulative_integral(0.5 * g_u * np.conj(g_v), dt)


@dataclass(frozen=True, eq=False)
class CouplingSchedule:
    grid: TimeGrid
    g_u: np.ndarray
    g_v: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    epsilon: float
    u: ModeFunction
    v: ModeFunction
    # first/last grid index where g_v / g_u are switched on
    v_start: int = field(default=0)
    u_stop: int = field(default=0)

    def __post_init__(self):
        for name in ("g_u", "g_v", "lam"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"schedule {name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def identical_modes(self) -> bool:
        return self.u is self.v or np.array_equal(self.u.samples, self.v.samples)

    @property
    def t_eps(self) -> float:
        """First time at which the downstream coupling is switched on."""
        return float(self.grid.times[self.v_start])

    def at(self, t: float) -> tuple[complex, complex]:
        """``(g_u(t), g_v(t))``."""
        return complex(sample_at(self.grid, self.g_u, t)), complex(sample_at(self.grid, self.g_v, t))

    def theta_at(self, t: float) -> float:
        return float(sample_at(self.grid, self.theta, t))

    def lam_at(self, t: float) -> complex:
        return complex(sample_at(self.grid, self.lam, t))

    def u_at(self, t: float) -> complex:
        return self.u.at(t)


def make_schedule(u: ModeFunction, v: ModeFunction | None = None, epsilon: float = DEFAULT_EPSILON) -> CouplingSchedule:
    """Precompute all couplings for input mode ``u`` and output mode ``v`` (defaults to ``u``)."""
    if v is None:
        v = u
    if v.grid != u.grid:
        raise ConfigurationError("input and output modes must share a time grid")
    g_u = coupling_gu(u, epsilon)
    g_v = coupling_gv(v, epsilon)
    theta = theta_schedule(u)
    lam = half_product_integral(g_u, g_v, u.grid.dt)
    on_v = np.flatnonzero(g_v)
    on_u = np.flatnonzero(g_u)
    return CouplingSchedule(
        grid=u.grid,
        g_u=g_u,
        g_v=g_v,
        theta=theta,
        lam=lam,
        epsilon=epsilon,
        u=u,
        v=v,
        v_start=int(on_v[0]) if len(on_v) else len(u.grid) - 1,
        u_stop=int(on_u[-1]) if len(on_u) else 0,
    )


def cavity_reflection(omega, gamma: float, omega_c: float = 0.0):
    """Reflection coefficient of a lossless one-sided cavity."""
    d = 1j * (np.asarray(omega) - omega_c)
    return (d + gamma / 2) / (d - gamma / 2)


def reflect_samples(samples: np.ndarray, dt: float, gamma: float, omega_c: float = 0.0, pad_factor: int = 4) -> np.ndarray:
    """Apply the cavity reflection filter to zero-padded samples.

    Fields evolve as ``exp(-i omega t)``; with numpy's FFT sign convention the
    physical frequency of bin ``k`` is ``-2 pi f_k``. The output has
    ``pad_factor`` times as many samples so the causal tail is not wrapped
    around onto the start of the grid.
    """
    npad = pad_factor * len(samples)
    spec = np.fft.fft(samples, npad)
    omega = -2 * pi * np.fft.fftfreq(npad, dt)
    r = cavity_reflection(omega, gamma, omega_c) if gamma > 0 else np.ones(npad)
    return np.fft.ifft(spec * r)


def cavity_output_mode(
    u: ModeFunction,
    gamma: float,
    omega_c: float = 0.0,
    tail_tol: float = 1e-4,
    pad_factor: int = 4,
) -> tuple[ModeFunction, float]:
    """Mode of the pulse after reflection from an empty cavity.

    Returns:
        The renormalized output mode and the weight it had on the grid before
        renormalization.

    Raises:
        TruncationError: more than ``tail_tol`` of the reflected pulse arrives
            after the end of the grid.
    """
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    n = len(u.grid)
    out = reflect_samples(u.samples, u.grid.dt, gamma, omega_c, pad_factor)
    captured = ModeFunction.norm_of(out[:n], u.grid.dt)
    if 1.0 - captured > tail_tol:
        raise TruncationError(f"output pulse extends past t={u.grid.t_end}; lengthen the grid", captured)
    return ModeFunction.normalized(u.grid, out[:n]), captured
