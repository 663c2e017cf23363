"""
The Occupancy Grid Filter: sequential probit-Bernoulli updates of a Gaussian map.

For a measurement y at cell i, with σ_i² = Σ_ii, s = √(σ_i² + 1), z = y·m̂_i/s
and λ = φ(z)/Φ(z):

    m̂' = m̂ + y·λ/s · Σv_i
    Σ'  = Σ - (m̂' - m̂)(m̂' - m̂)ᵀ - y·λ·m̂_i/s³ · Σv_i v_iᵀΣ

Both corrections are multiples of c cᵀ with c = Σv_i, so the covariance moves
by one rank-1 downdate with coefficient λ²/s² + y·λ·m̂_i/s³ = λ(λ + z)/s².
The second term changes sign with y·m̂_i and is applied as it comes; nothing
forces the covariance to shrink monotonically.

Updates are applied in the caller's order and the result depends on it.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ogfmap.grid import LatentMap, Measurement
from ogfmap.stats import inv_mills, log_std_normal_cdf, std_normal_cdf
from ogfmap.utils import get_logger

logger = get_logger('ogfmap').getChild('ogf')

VARIANCE_FLOOR = 1e-12


class NonFiniteStateError(ArithmeticError):
    """NaN or Inf appeared in the filter state."""


@dataclass(frozen=True)
class UpdateDiagnostics:
    """
    Attributes:
        eta: Measurement likelihood Φ(z_score); underflows to 0 below z ≈ -38
        log_eta: log Φ(z_score), finite where eta has underflowed
        z_score: y·m̂_i/√(σ_i² + 1)
        clamped_variances: Diagonal entries raised to the variance floor
        asymmetry: Max |Σ - Σᵀ| before symmetrization (0 unless checked)
    """
    eta: float
    z_score: float
    log_eta: float = 0.0
    clamped_variances: int = 0
    asymmetry: float = 0.0


def ogf_update(lmap: LatentMap,
               meas: Measurement,
               variance_floor: float = VARIANCE_FLOOR,
               check_symmetry: bool = False) -> Tuple[LatentMap, UpdateDiagnostics]:
    """
    Fold one measurement into the map, in place.

    Args:
        lmap: Map to update (modified and returned)
        meas: The measurement
        variance_floor: Lower clamp for posterior variances
        check_symmetry: Measure and remove covariance asymmetry after the update

    Returns:
        (lmap, diagnostics)

    Raises:
        OutOfLatticeError: If the measured cell is not in the lattice
        NonFiniteStateError: If the update produced NaN or Inf
    """
    lmap.lattice.check_cell(meas.cell)
    y = meas.label
    idx, column = lmap.cov.column(meas.cell)
    m_i, var_i = lmap.marginal(meas.cell)

    s2 = var_i + 1.0
    s = math.sqrt(s2)
    z = y * m_i / s
    lam = float(inv_mills(z))

    gain = y * lam / s
    beta = lam * lam / s2 + y * lam * m_i / (s2 * s)

    lmap.mean[idx] += gain * column
    lmap.cov.rank1_downdate(meas.cell, column, beta)

    asymmetry = lmap.cov.symmetrize() if check_symmetry else 0.0
    clamped = lmap.cov.floor_diagonal(idx, variance_floor)
    if clamped:
        lmap.clamped_total += clamped
        logger.warning(f"Cell {meas.cell} t={meas.time}: {clamped} variances clamped to {variance_floor}")

    if not (np.all(np.isfinite(lmap.mean[idx])) and math.isfinite(beta)):
        raise NonFiniteStateError(f"Non-finite state after measurement at cell {meas.cell}, t={meas.time}")

    diag = UpdateDiagnostics(eta=float(std_normal_cdf(z)), z_score=z, log_eta=float(log_std_normal_cdf(z)),
                             clamped_variances=clamped, asymmetry=asymmetry)
    logger.debug(f"cell={meas.cell} y={y} z={z:.6g} log_eta={diag.log_eta:.6g}")
    return lmap, diag


def ogf_process(lmap: LatentMap,
                batch: Sequence[Measurement],
                variance_floor: float = VARIANCE_FLOOR,
                check_symmetry: bool = False) -> Tuple[LatentMap, List[UpdateDiagnostics]]:
    """Apply ogf_update to every measurement, left to right."""
    diagnostics = []
    for meas in batch:
        lmap, diag = ogf_update(lmap, meas, variance_floor, check_symmetry)
        diagnostics.append(diag)
    return lmap, diagnostics
