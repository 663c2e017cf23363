"""
The 2-D comparison experiment: OGF, converged EP and the log-odds grid on a
ground-truth map sampled without repetition and without noise.

For every (sample count, trial) pair the three solvers see the same batch;
the trial's seed is cfg.seed + trial. Results come back as pandas tables in
matrix order whatever the number of workers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ogfmap import files
from ogfmap.baseline import L_HIT, L_MAX, L_MIN, L_MISS, LogOddsMap, logodds_classify, logodds_process
from ogfmap.ep import SCHEDULE, ep_run
from ogfmap.grid import GridLattice, LatentMap, Measurement, TernaryMap, Thresholds, classify
from ogfmap.kernel import KernelConfig, build_prior
from ogfmap.ogf import VARIANCE_FLOOR, ogf_process
from ogfmap.utils import Stopwatch, get_logger

logger = get_logger('ogfmap').getChild('sim2d')

RESULTS_COLUMNS = ['n', 'trial', 'acc_ogf', 'acc_ep', 'acc_baseline', 'mapdiff', 't_ogf_ms', 't_ep_ms']
DIAGNOSTICS_COLUMNS = ['n', 'trial', 'agree_ogf_ep', 'ep_sweeps', 'ep_converged', 'ep_diverged', 'scale_only']

BUNDLED_MAP = Path(__file__).parent / 'maps' / 'lab25.txt'


class UndefinedMetricError(ValueError):
    """The map difference is undefined for an all-zero EP map."""


@dataclass(frozen=True, eq=False)
class GroundTruthMap:
    """Fully labeled 2-D map, +1 occupied and -1 free, on a unit-resolution lattice."""
    grid: np.ndarray
    name: str = ''

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.int8)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError(f"Ground truth must be a non-empty 2-D array, got shape {grid.shape}")
        if not np.all(np.isin(grid, (-1, 1))):
            raise ValueError("Ground truth labels must all be -1 or +1")
        grid.setflags(write=False)
        object.__setattr__(self, 'grid', grid)

    @classmethod
    def parse(cls, text: str, name: str = '<string>') -> 'GroundTruthMap':
        return cls(files.parse_ground_truth(text, name), name)

    @classmethod
    def load(cls, path) -> 'GroundTruthMap':
        return cls(files.read_ground_truth(path), str(path))

    @classmethod
    def bundled(cls) -> 'GroundTruthMap':
        return cls.load(BUNDLED_MAP)

    @property
    def lattice(self) -> GridLattice:
        return GridLattice(self.grid.shape)

    @property
    def n_cells(self) -> int:
        return int(self.grid.size)

    def labels(self) -> np.ndarray:
        """Labels in linear cell order."""
        return self.grid.reshape(-1)

    def occupied_fraction(self) -> float:
        return float(np.mean(self.grid == 1))


@dataclass(frozen=True)
class ExperimentConfig:
    sample_counts: Tuple[int, ...] = tuple(range(30, 301, 30))
    seed: int = 0
    sigma: float = 1.0
    thresholds: Thresholds = field(default_factory=Thresholds)
    trials: int = 10
    ep_tol: float = 1e-6
    ep_max_sweeps: int = 100
    ep_max_skip_fraction: float = 0.01
    ep_divergence_sweeps: int = 3
    ep_debug: bool = False
    variance_floor: float = VARIANCE_FLOOR
    check_symmetry: bool = False
    l_hit: float = L_HIT
    l_miss: float = L_MISS
    l_min: float = L_MIN
    l_max: float = L_MAX
    workers: int = 1
    timings: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, 'sample_counts', tuple(int(n) for n in self.sample_counts))
        if any(n < 0 for n in self.sample_counts):
            raise ValueError(f"Sample counts must be non-negative: {self.sample_counts}")
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if self.ep_divergence_sweeps < 1:
            raise ValueError(f"ep.divergence_sweeps must be at least 1, got {self.ep_divergence_sweeps}")

    @classmethod
    def from_settings(cls, settings) -> 'ExperimentConfig':
        return cls(
            sample_counts=settings.get('sim2d.sample_counts'),
            seed=int(settings.get('sim2d.seed')),
            sigma=float(settings.get('sim2d.sigma')),
            thresholds=Thresholds(settings.get('thresholds.r_o'), settings.get('thresholds.r_f')),
            trials=int(settings.get('sim2d.trials')),
            ep_tol=float(settings.get('ep.tol')),
            ep_max_sweeps=int(settings.get('ep.max_sweeps')),
            ep_max_skip_fraction=float(settings.get('ep.max_skip_fraction')),
            ep_divergence_sweeps=int(settings.get('ep.divergence_sweeps')),
            ep_debug=bool(settings.get('ep.debug')),
            variance_floor=float(settings.get('ogf.variance_floor')),
            check_symmetry=bool(settings.get('ogf.check_symmetry')),
            l_hit=float(settings.get('baseline.l_hit')),
            l_miss=float(settings.get('baseline.l_miss')),
            l_min=float(settings.get('baseline.l_min')),
            l_max=float(settings.get('baseline.l_max')),
            workers=int(settings.get('sim2d.workers')),
            timings=bool(settings.get('sim2d.timings')),
        )

    def ep_options(self) -> Dict[str, Any]:
        """Keyword arguments for ep_run."""
        return {'tol': self.ep_tol, 'max_sweeps': self.ep_max_sweeps, 'debug': self.ep_debug,
                'max_skip_fraction': self.ep_max_skip_fraction,
                'divergence_sweeps': self.ep_divergence_sweeps}

    def check(self, gt: GroundTruthMap) -> None:
        """Raises ValueError if a sample count exceeds the number of cells."""
        too_many = [n for n in self.sample_counts if n > gt.n_cells]
        if too_many:
            raise ValueError(f"Sample count {too_many[0]} exceeds the {gt.n_cells} cells of the map")


def sample_without_repetition(gt: GroundTruthMap, n: int, seed) -> List[Measurement]:
    """
    n distinct cells drawn uniformly with a seeded shuffle, labels read from gt.

    Raises:
        ValueError: If n exceeds the number of cells
    """
    if not 0 <= n <= gt.n_cells:
        raise ValueError(f"Cannot draw {n} distinct cells from a map of {gt.n_cells}")
    cells = np.random.default_rng(seed).permutation(gt.n_cells)[:n]
    labels = gt.labels()
    return [Measurement(int(c), int(labels[c]), t) for t, c in enumerate(cells)]


def map_difference(m_c: np.ndarray, m_e: np.ndarray) -> float:
    """
    ‖m_c - m_e‖₂ / ‖m_e‖₂, the filter's deviation relative to the EP map.

    Raises:
        UndefinedMetricError: If m_e is all zeros
    """
    m_c = np.asarray(m_c, dtype=float)
    m_e = np.asarray(m_e, dtype=float)
    if m_c.shape != m_e.shape:
        raise ValueError(f"Mean vectors differ in shape: {m_c.shape} vs {m_e.shape}")
    denom = float(np.linalg.norm(m_e))
    if denom == 0.0:
        raise UndefinedMetricError("Map difference undefined: EP mean is all zeros")
    return float(np.linalg.norm(m_c - m_e)) / denom


def accuracy(est: TernaryMap, gt: GroundTruthMap) -> float:
    """Fraction of cells whose decision equals the ground truth; unknown never matches."""
    if est.states.size != gt.n_cells:
        raise ValueError(f"Estimate has {est.states.size} cells, ground truth has {gt.n_cells}")
    return float(np.mean(est.states == gt.labels()))


@dataclass(eq=False)
class TrialOutcome:
    row: Dict[str, Any]
    diagnostics: Dict[str, Any]
    maps: Dict[str, Tuple[TernaryMap, Optional[LatentMap]]] = field(default_factory=dict)


@dataclass(eq=False)
class ExperimentResult:
    """
    Attributes:
        results: One row per (n, trial), RESULTS_COLUMNS
        diagnostics: One row per (n, trial), DIAGNOSTICS_COLUMNS
        final_maps: Maps of the last matrix entry, keyed 'ogf', 'ep', 'baseline'
        metadata: Protocol description for run records
    """
    results: pd.DataFrame
    diagnostics: pd.DataFrame
    final_maps: Dict[str, Tuple[TernaryMap, Optional[LatentMap]]]
    metadata: Dict[str, Any]

    @property
    def scale_only_cases(self) -> pd.DataFrame:
        """Trials where the means differ but OGF and EP classify every cell alike."""
        return self.diagnostics[self.diagnostics['scale_only']]


def run_trial(cfg: ExperimentConfig, gt: GroundTruthMap, prior: LatentMap, n: int, trial: int) -> TrialOutcome:
    """One entry of the experiment matrix; prior is copied, never modified."""
    batch = sample_without_repetition(gt, n, cfg.seed + trial)
    th = cfg.thresholds

    sw_ogf = Stopwatch()
    with sw_ogf.running():
        ogf_map, _ = ogf_process(prior.copy(), batch, cfg.variance_floor, cfg.check_symmetry)
    sw_ep = Stopwatch()
    with sw_ep.running():
        state, converged = ep_run(prior, batch, **cfg.ep_options())
    base = logodds_process(LogOddsMap(gt.lattice, cfg.l_hit, cfg.l_miss, cfg.l_min, cfg.l_max), batch)

    t_ogf, t_ep, t_base = classify(ogf_map, th), classify(state.posterior, th), logodds_classify(base, th)
    try:
        mapdiff = map_difference(ogf_map.mean, state.posterior.mean)
    except UndefinedMetricError:
        mapdiff = math.nan
    agree = t_ogf.agreement(t_ep)

    row = {
        'n': n,
        'trial': trial,
        'acc_ogf': accuracy(t_ogf, gt),
        'acc_ep': accuracy(t_ep, gt),
        'acc_baseline': accuracy(t_base, gt),
        'mapdiff': mapdiff,
        't_ogf_ms': sw_ogf.elapsed_ms if cfg.timings else 0.0,
        't_ep_ms': sw_ep.elapsed_ms if cfg.timings else 0.0,
    }
    diagnostics = {
        'n': n,
        'trial': trial,
        'agree_ogf_ep': agree,
        'ep_sweeps': state.sweeps,
        'ep_converged': converged,
        'ep_diverged': state.diverged,
        'scale_only': bool(mapdiff > 0.0 and agree == 1.0),
    }
    logger.info(f"n={n} trial={trial}: acc ogf={row['acc_ogf']:.4f} ep={row['acc_ep']:.4f} "
                f"baseline={row['acc_baseline']:.4f} mapdiff={mapdiff:.4g} sweeps={state.sweeps}")
    maps = {'ogf': (t_ogf, ogf_map), 'ep': (t_ep, state.posterior), 'baseline': (t_base, None)}
    return TrialOutcome(row, diagnostics, maps)


def run_experiment(cfg: ExperimentConfig, gt: GroundTruthMap) -> ExperimentResult:
    """
    Run every (sample count, trial) entry.

    Raises:
        ValueError: If a sample count exceeds the number of cells
    """
    cfg.check(gt)
    prior = build_prior(gt.lattice, KernelConfig(sigma=cfg.sigma), 'dense', max(gt.n_cells, 1))
    matrix = [(n, trial) for n in cfg.sample_counts for trial in range(cfg.trials)]
    logger.info(f"Experiment on {gt.name or 'map'} {gt.grid.shape}: {len(matrix)} runs, {cfg.workers} worker(s)")

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            outcomes = list(executor.map(lambda job: run_trial(cfg, gt, prior, *job), matrix))
    else:
        outcomes = [run_trial(cfg, gt, prior, n, trial) for n, trial in matrix]

    results = pd.DataFrame([o.row for o in outcomes], columns=RESULTS_COLUMNS)
    diagnostics = pd.DataFrame([o.diagnostics for o in outcomes], columns=DIAGNOSTICS_COLUMNS)
    scale_only = int(diagnostics['scale_only'].sum()) if len(diagnostics) else 0
    if scale_only:
        logger.info(f"{scale_only} run(s) with identical OGF/EP classification but nonzero map difference")
    metadata = {
        'map': gt.name,
        'map_shape': list(gt.grid.shape),
        'sample_counts': list(cfg.sample_counts),
        'trials': cfg.trials,
        'seed': cfg.seed,
        'sigma': cfg.sigma,
        'ep_schedule': SCHEDULE,
        'ep_tol': cfg.ep_tol,
        'ep_max_sweeps': cfg.ep_max_sweeps,
        'ep_divergence_sweeps': cfg.ep_divergence_sweeps,
    }
    final_maps = outcomes[-1].maps if outcomes else {}
    return ExperimentResult(results, diagnostics, final_maps, metadata)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Per sample count: mean and standard deviation of accuracies and map difference."""
    return results.groupby('n')[['acc_ogf', 'acc_ep', 'acc_baseline', 'mapdiff']].agg(['mean', 'std'])
