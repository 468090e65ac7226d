"""Sparse projection matrices and the regularization transforms.

All operators act on flat vectors in the cube linear-index order
(``m + (n-1)M + (b-1)MN``, Fortran order on a ``(M, N, K)`` array).
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .datamodel import ConfigurationError, DimensionError, PatternCube, ValidationError


class SparseProjection:
    """Row-compressed sparse matrix with structural validation.

    Storage is a :class:`scipy.sparse.csr_matrix` with sorted, duplicate-free
    column indices.
    """

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.sort_indices()
        ind, ptr = m.indices, m.indptr
        if ind.size > 1:
            within = np.ones(ind.size - 1, dtype=bool)
            starts = ptr[1:-1]
            starts = starts[(starts > 0) & (starts < ind.size)]
            within[starts - 1] = False
            bad = np.flatnonzero(within & (np.diff(ind) <= 0))
            if bad.size:
                r = int(np.searchsorted(ptr, bad[0], side="right"))
                raise ValidationError(f"row {r} has repeated column indices")
        self.matrix = m

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def row_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.cols,):
            raise DimensionError(f"expected vector of length {self.cols}, got shape {x.shape}")
        return self.matrix @ x

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.rows,):
            raise DimensionError(f"expected vector of length {self.rows}, got shape {v.shape}")
        return self.matrix.T @ v

    def measurement_rate(self) -> float:
        return self.rows / self.cols

    def to_triplets(self, path) -> None:
        """Write ``row<TAB>col<TAB>value`` lines, 1-based."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# {self.rows}\t{self.cols}\t{self.nnz}\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r + 1}\t{c + 1}\t{float(v)!r}\n")

    def __repr__(self):
        return f"SparseProjection({self.rows}x{self.cols}, nnz={self.nnz})"


def _csr(data, indices, per_row, shape) -> SparseProjection:
    indptr = np.arange(0, shape[0] * per_row + 1, per_row, dtype=np.int64)
    return SparseProjection(sp.csr_matrix((data, indices, indptr), shape=shape))


def build_H_ms(S_ms: PatternCube, M: int, N: int, W: int, K: int, q: int) -> SparseProjection:
    """MS projection: each row sums the ``q`` feature bands of the pattern-selected MS filter.

    Row ``m + (n-1)M + (w-1)MN`` has ones at columns
    ``m + (n-1)M + ((S(m,n,w)-1)q + z - 1)MN`` for ``z = 1..q``.
    """
    if (S_ms.rows, S_ms.cols, S_ms.snapshots) != (M, N, W):
        raise DimensionError(f"pattern cube {S_ms.indices.shape} does not match ({M}, {N}, {W})")
    if q < 1 or K % q:
        raise ConfigurationError(f"q={q} must divide K={K}")
    S = S_ms.indices
    if S.max() > K // q:
        raise ValidationError(f"MS pattern index {S.max()} exceeds K/q={K // q}")
    MN = M * N
    pix = (np.arange(M)[:, None] + M * np.arange(N)[None, :])[:, :, None]
    first_band = (S - 1) * q  # 0-based band of z = 1
    base = (pix + first_band * MN).ravel(order="F")
    cols = base[:, None] + MN * np.arange(q)[None, :]
    return _csr(np.ones(cols.size), cols.ravel(), q, (MN * W, MN * K))


def build_H_hs(S_hs: PatternCube, M: int, N: int, K: int, p: int) -> SparseProjection:
    """HS projection: each row averages one pattern-selected band over a ``p x p`` block.

    Blocks tile the top-left ``floor(M/p)p x floor(N/p)p`` region.
    """
    if p < 1 or p > M or p > N:
        raise ConfigurationError(f"p={p} must lie in 1..min({M}, {N})")
    Mp, Np = M // p, N // p
    if (S_hs.rows, S_hs.cols) != (Mp, Np):
        raise DimensionError(f"HS patterns on {S_hs.rows}x{S_hs.cols} grid, expected {Mp}x{Np}")
    S = S_hs.indices
    if S.max() > K:
        raise ValidationError(f"HS pattern index {S.max()} exceeds K={K}")
    Ks = S_hs.snapshots
    MN = M * N
    mu = np.arange(Mp)[:, None, None]
    nu = np.arange(Np)[None, :, None]
    corner = mu * p + nu * p * M + (S - 1) * MN  # (Mp, Np, Ks)
    corner = corner.ravel(order="F")
    a = np.arange(p)
    # b outer, a inner keeps columns increasing within a row
    offsets = (a[None, :] + M * a[:, None]).ravel()
    cols = corner[:, None] + offsets[None, :]
    return _csr(np.full(cols.size, 1.0 / p ** 2), cols.ravel(), p * p, (Mp * Np * Ks, MN * K))


def stack_projections(H_ms: SparseProjection, H_hs: SparseProjection) -> SparseProjection:
    if H_ms.cols != H_hs.cols:
        raise DimensionError(f"column mismatch: {H_ms.cols} vs {H_hs.cols}")
    return SparseProjection(sp.vstack([H_ms.matrix, H_hs.matrix], format="csr"))


def build_projection(design) -> tuple[SparseProjection, SparseProjection, SparseProjection]:
    """``(H_ms, H_hs, H)`` for an :class:`~csfusion.aperture.ApertureDesign`."""
    M, N, K = design.rows, design.cols, design.hs_bank.count
    H_ms = build_H_ms(design.ms_patterns, M, N, design.W, K, design.q)
    H_hs = build_H_hs(design.hs_patterns, M, N, K, design.p)
    return H_ms, H_hs, stack_projections(H_ms, H_hs)


class DifferenceOperator:
    """First-order forward differences along rows, cols and bands.

    Output is ``[d_rows; d_cols; d_bands]``, each field ``x(i) - x(i+1)``
    with zero where the neighbour falls outside the grid.
    """

    def __init__(self, M: int, N: int, K: int):
        self.M, self.N, self.K = M, N, K

    @property
    def shape(self) -> tuple[int, int]:
        n = self.M * self.N * self.K
        return 3 * n, n

    def _cube(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.M * self.N * self.K,):
            raise DimensionError(f"expected vector of length {self.M * self.N * self.K}, got shape {x.shape}")
        return x.reshape((self.M, self.N, self.K), order="F")

    def apply(self, x) -> np.ndarray:
        c = self._cube(x)
        flat = np.zeros(3 * c.size)
        # Fortran views of the flat output keep every write contiguous
        out = flat.reshape(c.shape + (3,), order="F")
        np.subtract(c[:-1], c[1:], out=out[:-1, :, :, 0])
        np.subtract(c[:, :-1], c[:, 1:], out=out[:, :-1, :, 1])
        np.subtract(c[:, :, :-1], c[:, :, 1:], out=out[:, :, :-1, 2])
        return flat

    def adjoint(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        n = self.M * self.N * self.K
        if d.shape != (3 * n,):
            raise DimensionError(f"expected vector of length {3 * n}, got shape {d.shape}")
        f = [d[i * n:(i + 1) * n].reshape((self.M, self.N, self.K), order="F") for i in range(3)]
        out = np.zeros((self.M, self.N, self.K), order="F")
        for axis, g in enumerate(f):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            out[lo] += g[lo]
            out[hi] -= g[lo]
        return out.ravel(order="F")


def tv_forward(x, M: int, N: int, K: int) -> np.ndarray:
    return DifferenceOperator(M, N, K).apply(x)


def tv_adjoint(d, M: int, N: int, K: int) -> np.ndarray:
    return DifferenceOperator(M, N, K).adjoint(d)


def tv_norm(x, M: int, N: int, K: int) -> float:
    return float(np.abs(tv_forward(x, M, N, K)).sum())


_SQRT1_2 = 1.0 / math.sqrt(2.0)


def haar_step(a: np.ndarray, axis: int) -> np.ndarray:
    """One orthonormal Haar analysis step along ``axis``: ``[lowpass; highpass]``."""
    a = np.moveaxis(a, axis, 0)
    even, odd = a[0::2], a[1::2]
    out = np.concatenate([(even + odd) * _SQRT1_2, (even - odd) * _SQRT1_2], axis=0)
    return np.moveaxis(out, 0, axis)


def haar_step_inverse(c: np.ndarray, axis: int) -> np.ndarray:
    c = np.moveaxis(c, axis, 0)
    h = c.shape[0] // 2
    lo, hi = c[:h], c[h:]
    out = np.empty_like(c)
    out[0::2] = (lo + hi) * _SQRT1_2
    out[1::2] = (lo - hi) * _SQRT1_2
    return np.moveaxis(out, 0, axis)


class WaveletOperator:
    """Per-band 2-D orthonormal Haar transform with ``J`` levels (Mallat layout).

    ``apply`` is the analysis map (Psi^T), ``adjoint`` the synthesis (Psi).
    """

    def __init__(self, M: int, N: int, K: int, levels: int = 2):
        if levels < 0:
            raise ConfigurationError("wavelet levels must be non-negative")
        step = 2 ** levels
        if M % step or N % step:
            raise ConfigurationError(f"{M}x{N} grid is not divisible by 2**{levels}")
        self.M, self.N, self.K, self.levels = M, N, K, levels

    @property
    def shape(self) -> tuple[int, int]:
        n = self.M * self.N * self.K
        return n, n

    def _cube(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.M * self.N * self.K,):
            raise DimensionError(f"expected vector of length {self.M * self.N * self.K}, got shape {x.shape}")
        return x.reshape((self.M, self.N, self.K), order="F")

    def apply(self, x) -> np.ndarray:
        c = self._cube(x).copy()
        m, n = self.M, self.N
        for _ in range(self.levels):
            c[:m, :n] = haar_step(haar_step(c[:m, :n], 0), 1)
            m, n = m // 2, n // 2
        return c.ravel(order="F")

    def adjoint(self, coeffs) -> np.ndarray:
        c = self._cube(coeffs).copy()
        for lev in reversed(range(self.levels)):
            m, n = self.M >> lev, self.N >> lev
            c[:m, :n] = haar_step_inverse(haar_step_inverse(c[:m, :n], 1), 0)
        return c.ravel(order="F")


def wavelet_forward(x, M: int, N: int, K: int, levels: int = 2) -> np.ndarray:
    return WaveletOperator(M, N, K, levels).apply(x)


def wavelet_inverse(c, M: int, N: int, K: int, levels: int = 2) -> np.ndarray:
    return WaveletOperator(M, N, K, levels).adjoint(c)


def apply(op, x) -> np.ndarray:
    return op.apply(x)


def apply_adjoint(op, v) -> np.ndarray:
    return op.adjoint(v)
