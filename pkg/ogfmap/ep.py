"""
Expectation Propagation for GP classification on the lattice.

This is the reference solver the filter is checked against. Each measurement
owns a site t_i(m) = η̃ φ(m; μ̃, σ̃²). A sweep visits the measurements in the
given order (no damping):

    cavity -> moment_match -> site_from_moments -> posterior refresh

and the refresh is one Kalman-form rank-1 update with the change of the site's
natural parameters (τ̃ = 1/σ̃², ν̃ = μ̃/σ̃²), which is the same as removing the old
site and adding the new one. Only the dense backend is supported.

One sweep from fresh sites reproduces ogf_process exactly; sweeping to
convergence gives the EP posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from ogfmap.covariance import DenseCovariance
from ogfmap.grid import LatentMap, Measurement
from ogfmap.stats import inv_mills, log_std_normal_cdf, std_normal_cdf
from ogfmap.utils import get_logger

logger = get_logger('ogfmap').getChild('ep')

SCHEDULE = 'in-order, undamped'


class EpPathologyError(ArithmeticError):
    """EP produced an unusable site or posterior."""


class NegativeCavityError(EpPathologyError):
    """Removing a site left a non-positive cavity variance."""


@dataclass(frozen=True)
class SiteParams:
    """Unnormalized Gaussian site η̃·φ(m; μ̃, σ̃²); σ̃² = inf is the neutral site."""
    eta_tilde: float = 1.0
    mu_tilde: float = 0.0
    sigma2_tilde: float = math.inf

    def __post_init__(self) -> None:
        if not self.sigma2_tilde > 0:
            raise ValueError(f"Site variance must be positive, got {self.sigma2_tilde}")
        if not self.eta_tilde > 0:
            raise ValueError(f"Site scale must be positive, got {self.eta_tilde}")

    @property
    def initialized(self) -> bool:
        return math.isfinite(self.sigma2_tilde)

    @property
    def tau(self) -> float:
        return 1.0 / self.sigma2_tilde if self.initialized else 0.0

    @property
    def nu(self) -> float:
        return self.mu_tilde / self.sigma2_tilde if self.initialized else 0.0


@dataclass(frozen=True)
class CavityParams:
    mu_cav: float
    sigma2_cav: float

    def __post_init__(self) -> None:
        if not self.sigma2_cav > 0:
            raise NegativeCavityError(f"Cavity variance must be positive, got {self.sigma2_cav}")


@dataclass(frozen=True)
class MomentMatch:
    """Moments of the tilted distribution q_cav(m)·Φ(y·m)."""
    z: float
    eta_hat: float
    mu_hat: float
    sigma2_hat: float


@dataclass(eq=False)
class EpState:
    """
    Attributes:
        prior: Prior map (never modified)
        posterior: Current Gaussian approximation q(m | Z)
        batch: The measurements, one site each
        sites: Current site per measurement
        sweeps: Sweeps completed
        changes: Largest relative site change of each sweep
        skipped: Site updates skipped in the last sweep
        converged, diverged: Outcome flags set by ep_run
    """
    prior: LatentMap
    posterior: LatentMap
    batch: List[Measurement]
    sites: List[SiteParams]
    sweeps: int = 0
    changes: List[float] = field(default_factory=list)
    skipped: int = 0
    converged: bool = False
    diverged: bool = False

    @classmethod
    def initial(cls, prior: LatentMap, batch: Sequence[Measurement]) -> 'EpState':
        if not isinstance(prior.cov, DenseCovariance):
            raise ValueError("EP runs on the dense covariance backend only")
        batch = list(batch)
        for meas in batch:
            prior.lattice.check_cell(meas.cell)
        return cls(prior=prior, posterior=prior.copy(), batch=batch,
                   sites=[SiteParams() for _ in batch])

    def metadata(self) -> dict:
        return {'schedule': SCHEDULE, 'sweeps': self.sweeps, 'converged': self.converged,
                'diverged': self.diverged, 'skipped': self.skipped}


def cavity(state: EpState, i: int) -> CavityParams:
    """
    Leave-one-out marginal at the cell of measurement i.

    Raises:
        NegativeCavityError: If removing site i leaves a non-positive variance
    """
    site = state.sites[i]
    mu, var = state.posterior.marginal(state.batch[i].cell)
    if not var > 0:
        raise NegativeCavityError(f"Posterior variance {var} at measurement {i}")
    if not site.initialized:
        return CavityParams(mu, var)
    tau_cav = 1.0 / var - site.tau
    if not tau_cav > 0:
        raise NegativeCavityError(f"Cavity precision {tau_cav} at measurement {i}")
    sigma2_cav = 1.0 / tau_cav
    return CavityParams(sigma2_cav * (mu / var - site.nu), sigma2_cav)


def moment_match(cav: CavityParams, y: int) -> MomentMatch:
    """Mean and variance of q_cav(m)·Φ(y·m), normalized by η̂ = Φ(z)."""
    s2 = 1.0 + cav.sigma2_cav
    s = math.sqrt(s2)
    z = y * cav.mu_cav / s
    lam = float(inv_mills(z))
    mu_hat = cav.mu_cav + y * cav.sigma2_cav * lam / s
    sigma2_hat = cav.sigma2_cav - cav.sigma2_cav ** 2 * lam / s2 * (z + lam)
    return MomentMatch(z=z, eta_hat=float(std_normal_cdf(z)), mu_hat=mu_hat, sigma2_hat=sigma2_hat)


def site_from_moments(cav: CavityParams, mm: MomentMatch) -> SiteParams:
    """
    Site whose product with the cavity has the matched moments.

    Raises:
        EpPathologyError: If the matched variance does not contract the cavity
    """
    if not mm.sigma2_hat < cav.sigma2_cav:
        raise EpPathologyError(f"Matched variance {mm.sigma2_hat} does not contract cavity {cav.sigma2_cav}")
    tau = 1.0 / mm.sigma2_hat - 1.0 / cav.sigma2_cav
    sigma2 = 1.0 / tau
    mu = sigma2 * (mm.mu_hat / mm.sigma2_hat - cav.mu_cav / cav.sigma2_cav)
    spread = cav.sigma2_cav + sigma2
    log_eta = (float(log_std_normal_cdf(mm.z)) + 0.5 * math.log(2.0 * math.pi * spread)
               + (cav.mu_cav - mu) ** 2 / (2.0 * spread))
    return SiteParams(eta_tilde=math.exp(min(log_eta, 700.0)), mu_tilde=mu, sigma2_tilde=sigma2)


def kf_site_update(lmap: LatentMap, cell: int, site: SiteParams) -> LatentMap:
    """
    Kalman measurement update with the linear pseudo-observation m_cell ~ N(μ̃, σ̃²), in place.

        K = Σv / (Σ_ii + σ̃²);  μ' = μ + K(μ̃ - μ_i);  Σ' = (I - K vᵀ)Σ
    """
    if not site.initialized:
        return lmap
    lmap.lattice.check_cell(cell)
    idx, column = lmap.cov.column(cell)
    mu_i, var_i = lmap.marginal(cell)
    denom = var_i + site.sigma2_tilde
    lmap.mean[idx] += column * ((site.mu_tilde - mu_i) / denom)
    lmap.cov.rank1_downdate(cell, column, 1.0 / denom)
    return lmap


def _refresh(lmap: LatentMap, cell: int, d_tau: float, d_nu: float) -> None:
    """Posterior update for a change (d_tau, d_nu) of one site's natural parameters."""
    idx, column = lmap.cov.column(cell)
    mu_i, var_i = lmap.marginal(cell)
    denom = 1.0 + d_tau * var_i
    if not denom > 0:
        raise EpPathologyError(f"Site refresh at cell {cell} would make the posterior improper")
    lmap.mean[idx] += column * ((d_nu - d_tau * mu_i) / denom)
    lmap.cov.rank1_downdate(cell, column, d_tau / denom)


def _site_change(old: SiteParams, new: SiteParams) -> float:
    if not old.initialized:
        return math.inf
    d_mu = abs(new.mu_tilde - old.mu_tilde) / max(1.0, abs(old.mu_tilde))
    d_var = abs(new.sigma2_tilde - old.sigma2_tilde) / max(1.0, old.sigma2_tilde)
    return max(d_mu, d_var)


def _sweep(state: EpState) -> float:
    """One in-order pass over all sites; returns the largest relative site change."""
    change = 0.0
    skipped = 0
    for i, meas in enumerate(state.batch):
        old = state.sites[i]
        try:
            cav = cavity(state, i)
            mm = moment_match(cav, meas.label)
            new = site_from_moments(cav, mm)
        except EpPathologyError as e:
            skipped += 1
            logger.warning(f"Sweep {state.sweeps + 1}: skipping site {i} (cell {meas.cell}): {e}")
            continue
        _refresh(state.posterior, meas.cell, new.tau - old.tau, new.nu - old.nu)
        state.sites[i] = new
        change = max(change, _site_change(old, new))
    state.sweeps += 1
    state.skipped = skipped
    state.changes.append(change)
    return change


def _check_skips(state: EpState, max_skip_fraction: float) -> None:
    if state.skipped > max_skip_fraction * len(state.batch):
        raise EpPathologyError(
            f"Sweep {state.sweeps} skipped {state.skipped} of {len(state.batch)} site updates")


def recompute_posterior(state: EpState) -> LatentMap:
    """
    Rebuild q(m | Z) from the prior and all finite sites, from scratch.

    With T the per-cell sum of site precisions and ν the sum of site natural
    means, Σ = K - K S B⁻¹ S K with S = T^½ and B = I + S K S, and
    μ = m₀ + Σ(ν - T m₀).
    """
    prior = state.prior
    n = prior.n_cells
    tau = np.zeros(n)
    nu = np.zeros(n)
    for meas, site in zip(state.batch, state.sites):
        tau[meas.cell] += site.tau
        nu[meas.cell] += site.nu
    K = prior.cov.to_dense()
    sq = np.sqrt(tau)
    B = np.eye(n) + sq[:, None] * K * sq[None, :]
    factor = linalg.cho_factor(B, lower=True)
    SK = sq[:, None] * K
    sigma = K - SK.T @ linalg.cho_solve(factor, SK)
    sigma = 0.5 * (sigma + sigma.T)
    mean = prior.mean + sigma @ (nu - tau * prior.mean)
    return LatentMap(mean, DenseCovariance(sigma), prior.lattice, meta=dict(prior.meta))


def ep_run(prior: LatentMap,
           batch: Sequence[Measurement],
           tol: float = 1e-6,
           max_sweeps: int = 100,
           debug: bool = False,
           max_skip_fraction: float = 0.01,
           divergence_sweeps: int = 3) -> Tuple[EpState, bool]:
    """
    Sweep all sites until the largest relative site change drops below tol.

    A site's first update counts as an infinite change, so convergence needs
    at least two sweeps even for a single measurement: the second sweep
    confirms the sites the first one set.

    Args:
        prior: Dense prior map (not modified)
        batch: Measurements
        tol: Convergence tolerance on relative changes of (μ̃, σ̃²)
        max_sweeps: Sweep budget
        debug: Rebuild the posterior from scratch after each sweep and compare
        max_skip_fraction: Fraction of skipped site updates per sweep that aborts the run
        divergence_sweeps: Consecutive growing sweeps that flag divergence

    Returns:
        (state, converged)

    Raises:
        EpPathologyError: If too many site updates are skipped in one sweep
    """
    state = EpState.initial(prior, batch)
    previous = math.inf
    growing = 0
    for _ in range(max_sweeps):
        change = _sweep(state)
        _check_skips(state, max_skip_fraction)
        logger.info(f"EP sweep {state.sweeps}: max site change {change:.3g}, skipped {state.skipped}")
        if debug:
            _debug_check(state)
        if change < tol:
            state.converged = True
            break
        growing = growing + 1 if change > previous else 0
        if growing >= divergence_sweeps:
            state.diverged = True
            logger.warning(f"EP diverging after {state.sweeps} sweeps")
            break
        previous = change
    else:
        logger.warning(f"EP stopped at max_sweeps={max_sweeps} without converging")
    return state, state.converged


def ep_single_sweep(prior: LatentMap,
                    batch: Sequence[Measurement],
                    max_skip_fraction: float = 0.01) -> LatentMap:
    """Exactly one in-order sweep from neutral sites; returns the posterior."""
    state = EpState.initial(prior, batch)
    _sweep(state)
    _check_skips(state, max_skip_fraction)
    return state.posterior


def _debug_check(state: EpState, atol: float = 1e-8) -> None:
    rebuilt = recompute_posterior(state)
    gap = max(float(np.max(np.abs(rebuilt.mean - state.posterior.mean), initial=0.0)),
              float(np.max(np.abs(rebuilt.cov.to_dense() - state.posterior.cov.to_dense()), initial=0.0)))
    if gap > atol:
        logger.warning(f"EP sweep {state.sweeps}: incremental posterior drifted by {gap:.3g} from rebuild")
    else:
        logger.debug(f"EP sweep {state.sweeps}: rebuild gap {gap:.3g}")
