"""
Lattice geometry, filter state and occupancy classification.

Cells are linearized row-major over the axes in declared order, so cell
(i, j, k) of a lattice with dims (nx, ny, nz) is i*ny*nz + j*nz + k. Measurement
logs store linear indices and stay portable as long as dims are kept.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ogfmap.stats import std_normal_cdf

FREE = -1
UNKNOWN = 0
OCCUPIED = 1


class OutOfLatticeError(ValueError):
    """A cell index or a point lies outside the lattice."""


@dataclass(frozen=True)
class GridLattice:
    """
    Regular tessellation with 1 to 3 axes.

    Attributes:
        dims: Number of cells per axis
        resolution: Cell edge length (meters or grid units)
        origin: World coordinate of the center of cell (0, ..., 0)
    """
    dims: Tuple[int, ...]
    resolution: float = 1.0
    origin: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"Lattice must have 1 to 3 axes, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"Lattice dims must be positive: {dims}")
        if not self.resolution > 0:
            raise ValueError(f"Lattice resolution must be positive: {self.resolution}")
        origin = tuple(float(o) for o in self.origin) or (0.0,) * len(dims)
        if len(origin) != len(dims):
            raise ValueError(f"Origin {origin} does not match dims {dims}")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'resolution', float(self.resolution))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return math.prod(self.dims)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """World coordinates of the lower and upper lattice corners."""
        lo = np.asarray(self.origin) - 0.5 * self.resolution
        hi = lo + np.asarray(self.dims) * self.resolution
        return lo, hi

    def ravel(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in coords), self.dims))

    def unravel(self, cell: int) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(cell), self.dims))

    def in_bounds(self, coords) -> np.ndarray:
        """Row-wise bounds check of integer cell coordinates, shape (..., ndim)."""
        coords = np.asarray(coords)
        return np.all((coords >= 0) & (coords < np.asarray(self.dims)), axis=-1)

    def check_cell(self, cell: int) -> None:
        if not 0 <= int(cell) < self.n_cells:
            raise OutOfLatticeError(f"Cell index {cell} outside [0, {self.n_cells})")

    def to_grid(self, p) -> np.ndarray:
        """Continuous grid coordinates: cell k spans (k - 0.5, k + 0.5] per axis."""
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape[0] != self.ndim:
            raise ValueError(f"Point {p} has {p.shape[0]} coordinates, lattice has {self.ndim} axes")
        return (p - np.asarray(self.origin)) / self.resolution

    def world_to_coords(self, p) -> Optional[Tuple[int, ...]]:
        """
        Nearest cell center as integer coordinates, or None outside the lattice.

        A position exactly midway between two centers goes to the lower index.
        """
        u = self.to_grid(p)
        coords = np.ceil(u - 0.5).astype(int)
        if not self.in_bounds(coords):
            return None
        return tuple(int(c) for c in coords)

    def world_to_cell(self, p) -> Optional[int]:
        """Linear index of the nearest cell center, or None outside the lattice."""
        coords = self.world_to_coords(p)
        return None if coords is None else self.ravel(coords)

    def cell_to_world(self, cell: int) -> np.ndarray:
        self.check_cell(cell)
        return np.asarray(self.origin) + np.asarray(self.unravel(cell)) * self.resolution

    def contains(self, p) -> bool:
        return self.world_to_coords(p) is not None

    def cell_centers(self) -> np.ndarray:
        """World coordinates of every cell center, shape (n_cells, ndim), in linear order."""
        axes = [np.arange(d) for d in self.dims]
        mesh = np.meshgrid(*axes, indexing='ij')
        coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return np.asarray(self.origin) + coords * self.resolution


@dataclass(frozen=True)
class Thresholds:
    """Occupied / free probability thresholds applied to Φ(m̂)."""
    r_o: float = 0.65
    r_f: float = 0.35

    def __post_init__(self) -> None:
        if not (0.0 < self.r_f < 0.5 < self.r_o < 1.0):
            raise ValueError(f"Thresholds must satisfy 0 < r_f < 0.5 < r_o < 1, got r_f={self.r_f} r_o={self.r_o}")


@dataclass(frozen=True)
class Measurement:
    """One cell observation: linear cell index, label y in {-1, +1}, time step."""
    cell: int
    label: int
    time: int = 0

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError(f"Measurement label must be -1 or +1, got {self.label}")
        if self.cell < 0:
            raise ValueError(f"Measurement cell must be non-negative, got {self.cell}")
        if self.time < 0:
            raise ValueError(f"Measurement time must be non-negative, got {self.time}")


@dataclass(frozen=True, eq=False)
class TernaryMap:
    """Per-cell decision: -1 free, 0 unknown, +1 occupied."""
    states: np.ndarray
    lattice: GridLattice

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.int8).copy()
        if states.shape != (self.lattice.n_cells,):
            raise ValueError(f"TernaryMap has {states.size} states for {self.lattice.n_cells} cells")
        states.setflags(write=False)
        object.__setattr__(self, 'states', states)

    def counts(self) -> Dict[str, int]:
        return {
            'occupied_cells': int(np.count_nonzero(self.states == OCCUPIED)),
            'free_cells': int(np.count_nonzero(self.states == FREE)),
            'unknown_cells': int(np.count_nonzero(self.states == UNKNOWN)),
        }

    def agreement(self, other: 'TernaryMap') -> float:
        """Fraction of cells with identical decisions."""
        return float(np.mean(self.states == other.states))


@dataclass(eq=False)
class LatentMap:
    """
    Filter state: Gaussian belief over the latent occupancy of every cell.

    `cov` is a covariance backend (see ogfmap.covariance). The map has a single
    writer; updates happen in place and copy() hands out independent states.
    """
    mean: np.ndarray
    cov: object
    lattice: GridLattice
    clamped_total: int = 0
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.shape != (self.lattice.n_cells,):
            raise ValueError(f"Mean has shape {self.mean.shape}, lattice has {self.lattice.n_cells} cells")

    @property
    def n_cells(self) -> int:
        return self.lattice.n_cells

    @property
    def backend(self) -> str:
        return self.cov.name

    def variance(self) -> np.ndarray:
        return self.cov.diagonal()

    def marginal(self, cell: int) -> Tuple[float, float]:
        """(mean, variance) of one cell."""
        return float(self.mean[cell]), self.cov.variance(cell)

    def copy(self) -> 'LatentMap':
        return LatentMap(self.mean.copy(), self.cov.copy(), self.lattice,
                         self.clamped_total, copy.deepcopy(self.meta))


def occupancy_probability(lmap: LatentMap) -> np.ndarray:
    """Φ(m̂_i) for every cell."""
    return std_normal_cdf(lmap.mean)


def ternary_from_probability(p: np.ndarray, th: Thresholds) -> np.ndarray:
    p = np.asarray(p)
    states = np.zeros(p.shape, dtype=np.int8)
    states[p > th.r_o] = OCCUPIED
    states[p < th.r_f] = FREE
    return states


def classify(lmap: LatentMap, th: Thresholds) -> TernaryMap:
    """Threshold Φ(m̂) into occupied / free / unknown. Reads the mean only."""
    return TernaryMap(ternary_from_probability(occupancy_probability(lmap), th), lmap.lattice)
