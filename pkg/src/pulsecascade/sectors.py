"""Excitation-number block structure.

All generators in the cascaded problems either conserve the total number of
excitations (Hamiltonians) or lower it by exactly one (jump operators). Grouping
basis states by excitation number turns every operator product into a batch of
small dense products. Sectors are padded to a common size ``D`` so the batch is
a single ``np.matmul`` call; padding rows and columns stay identically zero.

Sectors above the highest excitation present in the initial state are dropped:
nothing in such a generator can populate them, so the restriction is exact.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .fock import CompositeSpace


class SectorLayout:
    def __init__(self, space: CompositeSpace, n_max: int | None = None):
        exc = space.excitations()
        self.space = space
        self.n_min = int(exc.min())
        self.n_max = int(exc.max()) if n_max is None else int(n_max)
        if self.n_max < self.n_min:
            raise ConfigurationError("empty sector range")
        members = [np.flatnonzero(exc == n) for n in range(self.n_min, self.n_max + 1)]
        self.S = len(members)
        self.D = max(len(m) for m in members)
        index = -np.ones((self.S, self.D), dtype=np.int64)
        for k, m in enumerate(members):
            index[k, : len(m)] = m
        self.index = index
        flat = index.ravel()
        self.valid = flat >= 0
        self.full_index = flat  # padded position -> full basis index (or -1)
        self.padded_index = -np.ones(space.dim, dtype=np.int64)
        self.padded_index[flat[self.valid]] = np.flatnonzero(self.valid)
        self.size = self.S * self.D

    def __repr__(self):
        return f"SectorLayout(n={self.n_min}..{self.n_max}, S={self.S}, D={self.D})"

    def blocks(self, mat: np.ndarray, shift: int) -> np.ndarray:
        """Sector blocks ``mat[sector k, sector k+shift]``; ``shift`` is 0 or 1."""
        S = self.S - shift
        out = np.zeros((S, self.D, self.D), dtype=complex)
        if S <= 0:
            return out
        rows = self.index[:S]
        cols = self.index[shift:]
        r = np.where(rows >= 0, rows, 0)[:, :, None]
        c = np.where(cols >= 0, cols, 0)[:, None, :]
        mask = (rows >= 0)[:, :, None] & (cols >= 0)[:, None, :]
        out[mask] = mat[np.broadcast_to(r, mask.shape)[mask], np.broadcast_to(c, mask.shape)[mask]]
        return out

    def violation(self, mat: np.ndarray, shift: int) -> float:
        """Largest entry of ``mat`` outside the pattern allowed for ``shift``.

        Columns of dropped sectors are ignored; rows are not.
        """
        exc = self.space.excitations()
        allowed = exc[:, None] == exc[None, :] - shift
        kept_cols = exc <= self.n_max
        bad = np.abs(mat) * (~allowed) * kept_cols[None, :]
        return float(bad.max(initial=0.0))

    def to_padded(self, rho: np.ndarray) -> np.ndarray:
        outside = self.space.excitations() > self.n_max
        if outside.any() and np.abs(np.diag(rho)[outside]).max() > 0:
            raise ConfigurationError("state populates sectors beyond n_max")
        out = np.zeros((self.size, self.size), dtype=complex)
        v = self.valid
        fi = self.full_index[v]
        out[np.ix_(v, v)] = rho[np.ix_(fi, fi)]
        return out

    def to_full(self, padded: np.ndarray) -> np.ndarray:
        out = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        v = self.valid
        fi = self.full_index[v]
        out[np.ix_(fi, fi)] = padded[np.ix_(v, v)]
        return out

    def padded_vector_mask(self, full_mask: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size, dtype=bool)
        out[self.valid] = full_mask[self.full_index[self.valid]]
        return out


def block_diag_apply(blocks: np.ndarray, rho: np.ndarray, layout: SectorLayout) -> np.ndarray:
    """``B @ rho`` for a block-diagonal ``B`` given as ``(S, D, D)`` blocks."""
    S, D = layout.S, layout.D
    return np.matmul(blocks, rho.reshape(S, D, -1)).reshape(rho.shape)


def lowering_apply(blocks: np.ndarray, rho: np.ndarray, layout: SectorLayout) -> np.ndarray:
    """``L @ rho`` for an operator mapping sector k+1 to sector k, blocks ``(S-1, D, D)``."""
    S, D = layout.S, layout.D
    r3 = rho.reshape(S, D, -1)
    out = np.zeros_like(r3)
    if S > 1:
        np.matmul(blocks, r3[1:], out=out[:-1])
    return out.reshape(rho.shape)
