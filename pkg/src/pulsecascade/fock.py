"""Truncated Fock-space algebra.

Every subsystem (pulse modes, cavity, two-level scatterer) is described by a
:class:`FockWindow`: a contiguous slice ``offset .. offset+size-1`` of number
states. A two-level atom is simply ``FockWindow(0, 2)``, whose annihilation
operator is sigma-minus.

Composite bases use Kronecker ordering with the leftmost subsystem as the
slowest index. The default layout of the cascaded problems is
``(u-mode, scatterer, v-mode)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, log, sqrt

import numpy as np

from .errors import ConfigurationError, TruncationError

#: Upper bound for ``offset + size`` of any window.
MAX_FOCK_INDEX = 4096

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
EIGEN_TOL = 1e-8


@dataclass(frozen=True)
class FockWindow:
    offset: int = 0
    size: int = 1

    def __post_init__(self):
        if int(self.offset) != self.offset or self.offset < 0:
            raise ConfigurationError(f"window offset must be a non-negative integer, got {self.offset}")
        if int(self.size) != self.size or self.size < 1:
            raise ConfigurationError(f"window size must be a positive integer, got {self.size}")
        if self.offset + self.size > MAX_FOCK_INDEX:
            raise ConfigurationError(
                f"window offset+size={self.offset + self.size} exceeds MAX_FOCK_INDEX={MAX_FOCK_INDEX}"
            )

    @property
    def top(self) -> int:
        return self.offset + self.size - 1

    @property
    def numbers(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)

    def local_index(self, n: int) -> int:
        if not self.offset <= n <= self.top:
            raise ConfigurationError(f"Fock state {n} outside window [{self.offset}, {self.top}]")
        return n - self.offset


@dataclass(frozen=True)
class CompositeSpace:
    windows: tuple[FockWindow, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if not self.windows:
            raise ConfigurationError("a composite space needs at least one subsystem")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"s{i}" for i in range(len(self.windows))))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != len(self.windows):
            raise ConfigurationError("one label per window required")

    @classmethod
    def single(cls, window: FockWindow, label: str = "mode") -> "CompositeSpace":
        return cls((window,), (label,))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(w.size for w in self.windows)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.windows):
                raise ConfigurationError(f"subsystem index {label} out of range")
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"unknown subsystem {label!r}; have {self.labels}") from None

    def occupations(self) -> np.ndarray:
        """Occupation numbers of every basis state, shape ``(dim, n_subsystems)``."""
        grids = np.meshgrid(*[w.numbers for w in self.windows], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def excitations(self) -> np.ndarray:
        """Total excitation number of every basis state."""
        return self.occupations().sum(axis=1)

    def basis_index(self, numbers) -> int:
        local = [w.local_index(n) for w, n in zip(self.windows, numbers, strict=True)]
        return int(np.ravel_multi_index(local, self.dims))


def _check_finite(data: np.ndarray, what: str):
    if not np.all(np.isfinite(data)):
        raise ConfigurationError(f"{what} contains NaN or Inf entries")


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense operator on a composite space."""

    space: CompositeSpace
    data: np.ndarray
    acts_on: frozenset[int] = field(default=None)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        n = self.space.dim
        if data.shape != (n, n):
            raise ConfigurationError(f"operator shape {data.shape} does not match space dimension {n}")
        _check_finite(data, "operator")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        acts = self.acts_on
        if acts is None:
            acts = range(len(self.space.windows))
        object.__setattr__(self, "acts_on", frozenset(acts))

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.data.conj().T, self.acts_on)

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, OperatorMatrix):
            if other.space != self.space:
                raise ConfigurationError("operators live on different spaces")
            return other.data
        return other

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.space, self.data @ self._coerce(other), self.acts_on | other.acts_on)
        return self.data @ other

    def __add__(self, other):
        acts = self.acts_on | other.acts_on if isinstance(other, OperatorMatrix) else self.acts_on
        return OperatorMatrix(self.space, self.data + self._coerce(other), acts)

    def __sub__(self, other):
        acts = self.acts_on | other.acts_on if isinstance(other, OperatorMatrix) else self.acts_on
        return OperatorMatrix(self.space, self.data - self._coerce(other), acts)

    def __neg__(self):
        return OperatorMatrix(self.space, -self.data, self.acts_on)

    def __mul__(self, scalar):
        return OperatorMatrix(self.space, self.data * complex(scalar), self.acts_on)

    __rmul__ = __mul__

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.data - self.data.conj().T), initial=0.0) <= tol)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite state.

    Construction validates the invariants; pass ``check=False`` only for
    matrices produced by code that already guarantees them.
    """

    space: CompositeSpace
    data: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        n = self.space.dim
        if data.shape != (n, n):
            raise ConfigurationError(f"state shape {data.shape} does not match space dimension {n}")
        _check_finite(data, "density matrix")
        if self.check:
            herm = np.max(np.abs(data - data.conj().T), initial=0.0)
            if herm > HERMITIAN_TOL:
                raise ConfigurationError(f"density matrix not Hermitian (residual {herm:.3g})")
            tr = np.trace(data).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ConfigurationError(f"density matrix trace {tr!r} differs from 1")
            lam = min_eigenvalue(data)
            if lam < -EIGEN_TOL:
                raise ConfigurationError(f"density matrix has negative eigenvalue {lam:.3g}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_vector(cls, space: CompositeSpace, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(space, np.outer(psi, psi.conj()))

    def expect(self, op) -> complex:
        mat = op.data if isinstance(op, OperatorMatrix) else np.asarray(op)
        # tr(A rho) without forming the product
        return complex(np.sum(mat * self.data.T))

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def purity(self) -> float:
        return float(np.real(np.sum(self.data * self.data.T)))


def min_eigenvalue(data: np.ndarray) -> float:
    herm = 0.5 * (data + data.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def annihilation(window: FockWindow) -> OperatorMatrix:
    """Ladder operator restricted to the window.

    The entry connecting ``offset`` to ``offset - 1`` falls outside the window
    and is dropped, as is the action on the top state of the next one up.
    """
    n = window.numbers[1:]
    data = np.diag(np.sqrt(n.astype(float)), k=1).astype(complex)
    return OperatorMatrix(CompositeSpace.single(window), data, frozenset({0}))


def creation(window: FockWindow) -> OperatorMatrix:
    return annihilation(window).dag()


def number_operator(window: FockWindow) -> OperatorMatrix:
    return OperatorMatrix(CompositeSpace.single(window), np.diag(window.numbers.astype(complex)), frozenset({0}))


def identity(space: CompositeSpace) -> OperatorMatrix:
    return OperatorMatrix(space, np.eye(space.dim, dtype=complex), frozenset())


def embed(op, target: CompositeSpace, index) -> OperatorMatrix:
    """Tensor a single-subsystem operator with identities on the other subsystems."""
    idx = target.index(index)
    mat = op.data if isinstance(op, OperatorMatrix) else np.asarray(op, dtype=complex)
    size = target.windows[idx].size
    if mat.shape != (size, size):
        raise ConfigurationError(
            f"operator of shape {mat.shape} cannot act on subsystem {idx} of size {size}"
        )
    left = int(np.prod(target.dims[:idx]))
    right = int(np.prod(target.dims[idx + 1:]))
    full = np.kron(np.kron(np.eye(left), mat), np.eye(right))
    return OperatorMatrix(target, full, frozenset({idx}))


def mode_operator(space: CompositeSpace, index) -> OperatorMatrix:
    """Annihilation operator of one subsystem embedded in ``space``."""
    idx = space.index(index)
    return embed(annihilation(space.windows[idx]), space, idx)


def coherent_amplitudes(alpha: complex, window: FockWindow) -> tuple[np.ndarray, float]:
    """Fock amplitudes of ``|alpha>`` on the window and the captured Poisson weight."""
    n = window.numbers
    alpha = complex(alpha)
    if alpha == 0:
        amps = (n == 0).astype(complex)
    else:
        # log-space to stay finite for large n
        logmag = -0.5 * abs(alpha) ** 2 + n * log(abs(alpha)) - 0.5 * np.array([lgamma(k + 1) for k in n])
        amps = np.exp(logmag) * np.exp(1j * np.angle(alpha) * n)
    captured = float(np.sum(np.abs(amps) ** 2))
    return amps, captured


def coherent_vector(alpha: complex, window: FockWindow, min_weight: float = 1 - 1e-6) -> np.ndarray:
    amps, captured = coherent_amplitudes(alpha, window)
    if captured < min_weight:
        raise TruncationError(
            f"window [{window.offset}, {window.top}] too small for coherent state alpha={alpha}", captured
        )
    return amps / sqrt(captured)


def coherent_state(alpha: complex, window: FockWindow, min_weight: float = 1 - 1e-6) -> DensityMatrix:
    psi = coherent_vector(alpha, window, min_weight)
    return DensityMatrix.from_vector(CompositeSpace.single(window), psi)


def fock_vector(n: int, window: FockWindow) -> np.ndarray:
    psi = np.zeros(window.size, dtype=complex)
    psi[window.local_index(n)] = 1.0
    return psi


def fock_state(n: int, window: FockWindow) -> DensityMatrix:
    return DensityMatrix.from_vector(CompositeSpace.single(window), fock_vector(n, window))


def product_state(*factors: DensityMatrix, labels=()) -> DensityMatrix:
    """Tensor product of single-subsystem states, leftmost slowest."""
    windows = []
    data = np.ones((1, 1), dtype=complex)
    for f in factors:
        windows.extend(f.space.windows)
        data = np.kron(data, f.data)
    return DensityMatrix(CompositeSpace(tuple(windows), tuple(labels)), data)
