"""
Covariance storage for LatentMap.

Two backends share one small interface (column read, rank-1 downdate, diagonal
floor, symmetry check):

  DenseCovariance    full N×N matrix; oracle tests and 2-D experiments.
  StencilCovariance  truncated storage for large 3-D lattices. Only pairs of
                     cells whose center distance is within cutoff_radius are
                     kept, as an N×K array over a fixed stencil of K integer
                     offsets. Fill-in outside the stencil is never stored.

Every update subtracts beta * c cᵀ with c a covariance column. The outer
product is formed as c_j * c_k, which is bitwise equal to c_k * c_j, so the
stored matrix stays exactly symmetric without a separate pass.
"""

from __future__ import annotations

import math
from typing import Dict, Tuple

import numpy as np

from ogfmap.grid import GridLattice


class DenseCovariance:
    name = 'dense'

    def __init__(self, matrix: np.ndarray) -> None:
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"Dense covariance must be square, got shape {matrix.shape}")
        self.matrix = matrix
        self._all = np.arange(matrix.shape[0])

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> 'DenseCovariance':
        return DenseCovariance(self.matrix)

    def variance(self, i: int) -> float:
        return float(self.matrix[i, i])

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().copy()

    def column(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """(cell indices, covariance values) of column i."""
        return self._all, self.matrix[:, i].copy()

    def rank1_downdate(self, i: int, values: np.ndarray, beta: float) -> None:
        """Σ ← Σ - beta * c cᵀ, c being column i as returned by column(i)."""
        self.matrix -= beta * np.outer(values, values)

    def floor_diagonal(self, indices: np.ndarray, eps: float) -> int:
        diag = self.matrix[indices, indices]
        low = indices[diag < eps]
        self.matrix[low, low] = eps
        return int(low.size)

    def symmetrize(self) -> float:
        """Average with the transpose; returns the asymmetry found before."""
        asym = float(np.max(np.abs(self.matrix - self.matrix.T))) if self.n else 0.0
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        return asym

    def to_dense(self) -> np.ndarray:
        return self.matrix.copy()


def stencil_offsets(lattice: GridLattice, cutoff_radius: float) -> np.ndarray:
    """
    Integer offsets whose length in world units is within cutoff_radius.

    Offsets longer than the lattice extent on any axis are left out. The result
    is sorted lexicographically and always contains the zero offset.
    """
    reach = int(math.floor(cutoff_radius / lattice.resolution + 1e-9))
    ranges = [np.arange(-min(reach, d - 1), min(reach, d - 1) + 1) for d in lattice.dims]
    mesh = np.meshgrid(*ranges, indexing='ij')
    offsets = np.stack([m.reshape(-1) for m in mesh], axis=1)
    length = np.linalg.norm(offsets, axis=1) * lattice.resolution
    return offsets[length <= cutoff_radius * (1.0 + 1e-9)]


class StencilCovariance:
    """
    Truncated symmetric covariance over a fixed neighbor stencil.

    data[j, k] holds Σ(j, j + offsets[k]); entries whose neighbor falls outside
    the lattice are zero and never touched.
    """
    name = 'sparse'

    def __init__(self, lattice: GridLattice, cutoff_radius: float, data: np.ndarray | None = None) -> None:
        if not cutoff_radius > 0 or math.isinf(cutoff_radius):
            raise ValueError(f"Truncated covariance needs a finite positive cutoff, got {cutoff_radius}")
        self.lattice = lattice
        self.cutoff_radius = float(cutoff_radius)
        self.offsets = stencil_offsets(lattice, cutoff_radius)
        self.k = len(self.offsets)
        self.center = int(np.flatnonzero(~self.offsets.any(axis=1))[0])
        self._dims = np.asarray(lattice.dims)
        self._strides = np.array([math.prod(lattice.dims[a + 1:]) for a in range(lattice.ndim)])
        self._lin_offsets = self.offsets @ self._strides
        self._compose, self._mirror = self._offset_tables()
        shape = (lattice.n_cells, self.k)
        if data is None:
            data = np.zeros(shape)
        data = np.array(data, dtype=float)
        if data.shape != shape:
            raise ValueError(f"Stencil data has shape {data.shape}, expected {shape}")
        self.data = data

    def _offset_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """compose[a, k] = index of offsets[a] + offsets[k] (-1 if absent); mirror[k] = index of -offsets[k]."""
        index: Dict[Tuple[int, ...], int] = {tuple(o): n for n, o in enumerate(self.offsets.tolist())}
        compose = np.full((self.k, self.k), -1, dtype=np.int64)
        for a, oa in enumerate(self.offsets.tolist()):
            for k, ok in enumerate(self.offsets.tolist()):
                compose[a, k] = index.get(tuple(x + y for x, y in zip(oa, ok)), -1)
        mirror = np.array([index[tuple(-x for x in o)] for o in self.offsets.tolist()], dtype=np.int64)
        return compose, mirror

    @classmethod
    def from_profile(cls, lattice: GridLattice, cutoff_radius: float, profile) -> 'StencilCovariance':
        """Stationary covariance: entry for offset o is profile(|o| * resolution)."""
        cov = cls(lattice, cutoff_radius)
        values = np.asarray(profile(np.linalg.norm(cov.offsets, axis=1) * lattice.resolution), dtype=float)
        coords = cov._all_coords()
        for k in range(cov.k):
            cov.data[:, k] = np.where(lattice.in_bounds(coords + cov.offsets[k]), values[k], 0.0)
        return cov

    def _all_coords(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(self.lattice.n_cells), self.lattice.dims), axis=1)

    @property
    def n(self) -> int:
        return self.lattice.n_cells

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    def copy(self) -> 'StencilCovariance':
        return StencilCovariance(self.lattice, self.cutoff_radius, self.data)

    def neighbors(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """(linear index per stencil slot, in-bounds mask) around cell i."""
        coords = np.asarray(np.unravel_index(int(i), self.lattice.dims))
        valid = self.lattice.in_bounds(coords + self.offsets)
        return int(i) + self._lin_offsets, valid

    def variance(self, i: int) -> float:
        return float(self.data[i, self.center])

    def diagonal(self) -> np.ndarray:
        return self.data[:, self.center].copy()

    def column(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        lin, valid = self.neighbors(i)
        return lin[valid], self.data[i, valid].copy()

    def rank1_downdate(self, i: int, values: np.ndarray, beta: float) -> None:
        """
        Σ ← Σ - beta * c cᵀ on the stored pairs only.

        Both cells of a touched pair are stencil neighbors of i; pairs further
        apart than cutoff_radius are dropped.
        """
        lin, valid = self.neighbors(i)
        c = np.zeros(self.k)
        c[valid] = values
        partner = self._compose
        ok = valid[:, None] & (partner >= 0)
        ok &= valid[np.where(partner >= 0, partner, self.center)]
        rows, slots = np.nonzero(ok)
        self.data[lin[rows], slots] -= beta * (c[rows] * c[partner[rows, slots]])

    def floor_diagonal(self, indices: np.ndarray, eps: float) -> int:
        diag = self.data[indices, self.center]
        low = indices[diag < eps]
        self.data[low, self.center] = eps
        return int(low.size)

    def symmetrize(self) -> float:
        """Average each stored pair with its mirror; returns the asymmetry found before."""
        coords = self._all_coords()
        asym = 0.0
        for k in range(self.k):
            m = self._mirror[k]
            if m < k:
                continue
            rows = np.flatnonzero(self.lattice.in_bounds(coords + self.offsets[k]))
            cols = rows + self._lin_offsets[k]
            a, b = self.data[rows, k], self.data[cols, m]
            if rows.size:
                asym = max(asym, float(np.max(np.abs(a - b))))
            mean = 0.5 * (a + b)
            self.data[rows, k] = mean
            self.data[cols, m] = mean
        return asym

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        coords = self._all_coords()
        for k in range(self.k):
            rows = np.flatnonzero(self.lattice.in_bounds(coords + self.offsets[k]))
            out[rows, rows + self._lin_offsets[k]] = self.data[rows, k]
        return out
