"""
Prior covariance from the normal-pdf kernel k(x, x') = φ(‖x - x'‖; 0, σ²).

The kernel is not renormalized: prior variances are 1/(σ√(2π)), not 1.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ogfmap.covariance import DenseCovariance, StencilCovariance
from ogfmap.grid import GridLattice, LatentMap
from ogfmap.utils import get_logger

logger = get_logger('ogfmap').getChild('kernel')

DEFAULT_DENSE_LIMIT = 5000


class CapacityError(ValueError):
    """The requested covariance backend cannot hold the lattice."""


@dataclass(frozen=True)
class KernelConfig:
    """
    Attributes:
        sigma: Kernel standard deviation, lattice coordinate units
        cutoff_radius: Distance beyond which correlation is exactly zero (inf = dense)
    """
    sigma: float = 1.0
    cutoff_radius: float = math.inf

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"Kernel sigma must be positive, got {self.sigma}")
        if not self.cutoff_radius > 0:
            raise ValueError(f"Kernel cutoff_radius must be positive, got {self.cutoff_radius}")

    def profile(self, d):
        """Kernel value as a function of distance, elementwise."""
        d = np.asarray(d, dtype=float)
        value = np.exp(-0.5 * (d / self.sigma) ** 2) / (self.sigma * math.sqrt(2.0 * math.pi))
        return np.where(d > self.cutoff_radius * (1.0 + 1e-9), 0.0, value)

    @property
    def prior_variance(self) -> float:
        return 1.0 / (self.sigma * math.sqrt(2.0 * math.pi))


def kernel_eval(cfg: KernelConfig, x, x_prime) -> float:
    """φ(‖x - x'‖₂; 0, σ²), exactly 0 beyond the cutoff radius."""
    d = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)))
    return float(cfg.profile(d))


def build_prior(lattice: GridLattice,
                cfg: KernelConfig,
                backend: str = 'dense',
                dense_limit: int = DEFAULT_DENSE_LIMIT) -> LatentMap:
    """
    Zero-mean prior with Σ₀[i, j] = k(x_i, x_j) over the cell centers.

    Args:
        lattice: The tessellation
        cfg: Kernel parameters
        backend: 'dense', 'sparse', or 'auto' (dense up to dense_limit cells)
        dense_limit: Largest cell count accepted by the dense backend

    Raises:
        CapacityError: If the dense backend is requested above dense_limit
        ValueError: If the sparse backend is requested with an infinite cutoff
    """
    n = lattice.n_cells
    if backend == 'auto':
        backend = 'dense' if n <= dense_limit else 'sparse'

    if backend == 'dense':
        if n > dense_limit:
            raise CapacityError(f"Dense covariance limited to {dense_limit} cells, lattice has {n}")
        centers = lattice.cell_centers()
        cov = DenseCovariance(cfg.profile(cdist(centers, centers)))
    elif backend == 'sparse':
        cov = StencilCovariance.from_profile(lattice, cfg.cutoff_radius, cfg.profile)
        logger.info(f"Truncated prior: {cov.k} stencil offsets, {cov.nbytes / 2**20:.1f} MiB")
    else:
        raise ValueError(f"Unknown covariance backend: {backend}")

    return LatentMap(np.zeros(n), cov, lattice,
                     meta={'sigma': cfg.sigma, 'cutoff_radius': cfg.cutoff_radius})
