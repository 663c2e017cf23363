"""
Independent-cell log-odds occupancy grid, the correlation-free comparison.

Each cell carries l = log(p / (1 - p)); a hit adds l_hit, a miss adds l_miss,
and the result is clamped to [l_min, l_max]. No cell ever influences another.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from ogfmap.grid import GridLattice, Measurement, TernaryMap, Thresholds, ternary_from_probability

L_HIT = math.log(0.7 / 0.3)
L_MISS = math.log(0.3 / 0.7)
L_MIN = -3.5
L_MAX = 3.5


@dataclass(eq=False)
class LogOddsMap:
    lattice: GridLattice
    l_hit: float = L_HIT
    l_miss: float = L_MISS
    l_min: float = L_MIN
    l_max: float = L_MAX
    logodds: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if not self.l_min < 0.0 < self.l_max:
            raise ValueError(f"Clamp bounds must satisfy l_min < 0 < l_max, got [{self.l_min}, {self.l_max}]")
        if not (self.l_hit > 0.0 and self.l_miss < 0.0):
            raise ValueError(f"Need l_hit > 0 > l_miss, got l_hit={self.l_hit} l_miss={self.l_miss}")
        if self.logodds is None:
            self.logodds = np.zeros(self.lattice.n_cells)
        else:
            self.logodds = np.clip(np.asarray(self.logodds, dtype=float), self.l_min, self.l_max)
            if self.logodds.shape != (self.lattice.n_cells,):
                raise ValueError(f"Log-odds vector has shape {self.logodds.shape}, "
                                 f"lattice has {self.lattice.n_cells} cells")

    @classmethod
    def from_settings(cls, lattice: GridLattice, settings) -> 'LogOddsMap':
        """Construct with the constants of the `baseline` configuration section."""
        return cls(lattice,
                   l_hit=float(settings.get('baseline.l_hit')),
                   l_miss=float(settings.get('baseline.l_miss')),
                   l_min=float(settings.get('baseline.l_min')),
                   l_max=float(settings.get('baseline.l_max')))


def logodds_update(lmap: LogOddsMap, meas: Measurement) -> LogOddsMap:
    """
    Add the hit or miss increment to the measured cell, in place.

    Raises:
        OutOfLatticeError: If the cell is not in the lattice
    """
    lmap.lattice.check_cell(meas.cell)
    step = lmap.l_hit if meas.label > 0 else lmap.l_miss
    lmap.logodds[meas.cell] = min(lmap.l_max, max(lmap.l_min, lmap.logodds[meas.cell] + step))
    return lmap


def logodds_process(lmap: LogOddsMap, batch: Sequence[Measurement]) -> LogOddsMap:
    for meas in batch:
        logodds_update(lmap, meas)
    return lmap


def occupancy_probability(lmap: LogOddsMap) -> np.ndarray:
    """p = 1 / (1 + exp(-l)) for every cell."""
    return expit(lmap.logodds)


def logodds_classify(lmap: LogOddsMap, th: Thresholds) -> TernaryMap:
    return TernaryMap(ternary_from_probability(occupancy_probability(lmap), th), lmap.lattice)
