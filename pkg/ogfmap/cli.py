"""
ogfmap.cli: reproducible runs from the command line.

Two layers:

  cmd_*()           One function per subcommand: receive parsed args, run the
                    library, write outputs, return an exit code.

  make_parser()     Build and return the ArgumentParser.

  main()            Parse, dispatch through run_cli() and map exceptions to
                    exit codes: 0 success, 1 computation pathology (EP
                    divergence, non-finite state), 2 I/O or argument error.

Every command writes run.json into its output directory, recording flags,
effective settings and library versions.

  python -m ogfmap sim2d --samples 300 --seed 7 --out results/
  python -m ogfmap compare --samples 300 --ep-max-sweeps 1
  python -m ogfmap map3d --poses poses.csv --scans scans.csv --dims 12 12 4 --out room/
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from ogfmap import __version__, files
from ogfmap.baseline import LogOddsMap, logodds_classify
from ogfmap.cloud3d import assemble_frames, build_map_3d
from ogfmap.config import Settings
from ogfmap.ep import SCHEDULE, EpPathologyError, ep_run, ep_single_sweep
from ogfmap.grid import GridLattice, Thresholds, classify
from ogfmap.kernel import KernelConfig, build_prior
from ogfmap.ogf import NonFiniteStateError, ogf_process
from ogfmap.sim2d import (ExperimentConfig, GroundTruthMap, UndefinedMetricError, accuracy,
                          map_difference, run_experiment, sample_without_repetition)
from ogfmap.utils import get_logger, logging_to_file

logger = get_logger('ogfmap').getChild('cli')

EXIT_OK = 0
EXIT_PATHOLOGY = 1
EXIT_USAGE = 2


# ── Helpers ──────────────────────────────────────────────────────────────────

def load_settings(args: argparse.Namespace) -> Settings:
    """Configuration file (if any) with the command-line flags applied on top."""
    settings = Settings.load(args.config)
    if args.log_file:
        settings.set('log_file', args.log_file)
        logging_to_file(settings.logger, args.log_file)
    if args.verbose:
        settings.set('log_level', 'DEBUG')
        settings.logger.setLevel(logging.DEBUG)

    flags = {
        'ro': 'thresholds.r_o',
        'rf': 'thresholds.r_f',
        'ep_tol': 'ep.tol',
        'ep_max_sweeps': 'ep.max_sweeps',
    }
    for flag, path in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings.set(path, value)
    return settings


def _thresholds(settings: Settings) -> Thresholds:
    return Thresholds(float(settings.get('thresholds.r_o')), float(settings.get('thresholds.r_f')))


def _ground_truth(settings: Settings) -> GroundTruthMap:
    path = settings.get('sim2d.map')
    return GroundTruthMap.load(path) if path else GroundTruthMap.bundled()


def _out_dir(args: argparse.Namespace) -> Optional[Path]:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_record(out: Path, command: str, args: argparse.Namespace,
                     settings: Settings, extra: Optional[Dict[str, Any]] = None) -> None:
    """run.json: everything needed to repeat the run."""
    flags = {k: v for k, v in sorted(vars(args).items()) if k != 'handler'}
    record = {
        'command': command,
        'flags': flags,
        'settings': settings.to_dict(),
        'versions': {'ogfmap': __version__, 'numpy': np.__version__,
                     'scipy': scipy.__version__, 'pandas': pd.__version__},
    }
    record.update(extra or {})
    files.write_json(out / 'run.json', _finite(record))


def _finite(value: Any) -> Any:
    """Replace non-finite floats, which JSON cannot carry, by None."""
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# ── sim2d ────────────────────────────────────────────────────────────────────

def cmd_sim2d(args: argparse.Namespace) -> int:
    """Run the 2-D experiment matrix; write results, diagnostics and final maps."""
    settings = load_settings(args)
    for flag, path in (('map', 'sim2d.map'), ('seed', 'sim2d.seed'), ('sigma', 'sim2d.sigma'),
                       ('workers', 'sim2d.workers')):
        value = getattr(args, flag)
        if value is not None:
            settings.set(path, value)
    if args.samples is not None:
        settings.set('sim2d.sample_counts', args.samples)
        # an explicit sample list is one batch per count unless trials are given
        settings.set('sim2d.trials', args.trials if args.trials is not None else 1)
    elif args.trials is not None:
        settings.set('sim2d.trials', args.trials)
    if args.no_timings:
        settings.set('sim2d.timings', False)

    gt = _ground_truth(settings)
    cfg = ExperimentConfig.from_settings(settings)
    cfg.check(gt)
    result = run_experiment(cfg, gt)

    out = _out_dir(args)
    if out is not None:
        result.results.to_csv(out / 'results.csv', index=False, float_format='%.17g')
        result.diagnostics.to_csv(out / 'diagnostics.csv', index=False)
        for solver, (tmap, lmap) in result.final_maps.items():
            if lmap is None:
                files.write_map_csv(out / f'map_{solver}.csv', tmap)
            else:
                files.write_latent_csv(out / f'map_{solver}.csv', lmap, tmap)
        write_run_record(out, 'sim2d', args, settings, {'experiment': result.metadata})
        logger.info(f"Wrote {len(result.results)} result rows to {out / 'results.csv'}")
    else:
        print(result.results.to_string(index=False))

    if result.diagnostics['ep_diverged'].any():
        print("Error: EP diverged in at least one run (see diagnostics.csv)", file=sys.stderr)
        return EXIT_PATHOLOGY
    return EXIT_OK


# ── compare ──────────────────────────────────────────────────────────────────

def compare_table(gt: GroundTruthMap, n: int, cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Run OGF, one EP sweep and EP to convergence on one batch drawn with cfg.seed.

    Kernel width, thresholds and the OGF/EP options all come from cfg. Rows
    are metrics, columns the solvers. mapdiff is taken against converged EP,
    the max deltas against OGF.
    """
    th = cfg.thresholds
    batch = sample_without_repetition(gt, n, cfg.seed)
    prior = build_prior(gt.lattice, KernelConfig(sigma=cfg.sigma), 'dense', max(gt.n_cells, 1))
    ogf_map, _ = ogf_process(prior.copy(), batch, cfg.variance_floor, cfg.check_symmetry)
    single = ep_single_sweep(prior, batch, cfg.ep_max_skip_fraction)
    state, _ = ep_run(prior, batch, **cfg.ep_options())
    if state.diverged:
        raise EpPathologyError(f"EP diverged after {state.sweeps} sweeps")

    solvers = {'ogf': (ogf_map, 0), 'ep_single': (single, 1), 'ep_converged': (state.posterior, state.sweeps)}
    ogf_cov = ogf_map.cov.to_dense()
    table: Dict[str, Dict[str, float]] = {}
    for name, (lmap, sweeps) in solvers.items():
        try:
            mapdiff = map_difference(lmap.mean, state.posterior.mean)
        except UndefinedMetricError:
            mapdiff = math.nan
        table[name] = {
            'mapdiff': mapdiff,
            'max_mean_delta': float(np.max(np.abs(lmap.mean - ogf_map.mean))),
            'max_cov_delta': float(np.max(np.abs(lmap.cov.to_dense() - ogf_cov))),
            'accuracy': accuracy(classify(lmap, th), gt),
            'sweeps': float(sweeps),
        }
    return pd.DataFrame(table)


def cmd_compare(args: argparse.Namespace) -> int:
    """OGF against single-sweep and converged EP on one seeded batch."""
    settings = load_settings(args)
    if args.map is not None:
        settings.set('sim2d.map', args.map)
    if args.seed is not None:
        settings.set('sim2d.seed', args.seed)
    if args.sigma is not None:
        settings.set('sim2d.sigma', args.sigma)
    gt = _ground_truth(settings)

    table = compare_table(gt, args.samples, ExperimentConfig.from_settings(settings))
    print(table.to_string(float_format=lambda v: f'{v:.3e}'))

    out = _out_dir(args)
    if out is not None:
        table.to_csv(out / 'compare.csv', float_format='%.17g', index_label='metric')
        write_run_record(out, 'compare', args, settings, {'ep_schedule': SCHEDULE})
    return EXIT_OK


# ── map3d ────────────────────────────────────────────────────────────────────

def cmd_map3d(args: argparse.Namespace) -> int:
    """Build a 3-D map from poses and scans files."""
    settings = load_settings(args)
    for flag, path in (('dims', 'cloud3d.dims'), ('resolution', 'cloud3d.resolution'),
                       ('origin', 'cloud3d.origin'), ('max_range', 'cloud3d.max_range'),
                       ('sigma', 'cloud3d.sigma'), ('backend', 'cloud3d.backend')):
        value = getattr(args, flag)
        if value is not None:
            settings.set(path, value)
    if args.cutoff_radius is not None:
        settings.set('kernel.cutoff_radius', args.cutoff_radius)

    res = float(settings.get('cloud3d.resolution'))
    lattice = GridLattice(tuple(settings.get('cloud3d.dims')), res, tuple(settings.get('cloud3d.origin')))
    sigma = settings.get('cloud3d.sigma')
    cutoff = settings.get('kernel.cutoff_radius')
    kernel_cfg = KernelConfig(sigma=float(sigma) if sigma is not None else res / 2.0,
                              cutoff_radius=float(cutoff) if cutoff is not None
                              else int(settings.get('cloud3d.cutoff_cells')) * res)

    poses = files.read_poses(args.poses)
    frames = assemble_frames(poses, files.read_scans(args.scans))
    baseline = LogOddsMap.from_settings(lattice, settings) if args.baseline else None
    record: List = []
    lmap, tmap, stats = build_map_3d(frames, lattice, kernel_cfg, _thresholds(settings),
                                     backend=settings.get('cloud3d.backend'),
                                     dense_limit=int(settings.get('kernel.dense_limit')),
                                     max_range=float(settings.get('cloud3d.max_range')),
                                     variance_floor=float(settings.get('ogf.variance_floor')),
                                     check_symmetry=bool(settings.get('ogf.check_symmetry')),
                                     baseline=baseline, record=record)

    out = _out_dir(args) or Path('.')
    files.write_latent_csv(out / 'map.csv', lmap, tmap)
    files.write_ply(out / 'occupied.ply', tmap)
    files.write_measurements(out / 'measurements.csv', record)
    files.write_json(out / 'stats.json', stats)
    if baseline is not None:
        btmap = logodds_classify(baseline, _thresholds(settings))
        files.write_map_csv(out / 'map_baseline.csv', btmap, baseline.logodds)
    write_run_record(out, 'map3d', args, settings,
                     {'kernel': {'sigma': kernel_cfg.sigma, 'cutoff_radius': kernel_cfg.cutoff_radius},
                      'backend': lmap.backend})
    logger.info(f"map3d: {stats['measurements_taken']} measurements, {stats['occupied_cells']} occupied cells")
    return EXIT_OK


# ── Parser ───────────────────────────────────────────────────────────────────

def make_parser() -> argparse.ArgumentParser:
    """
    Build and return the ogfmap argument parser.

    Flags left unset fall back to the configuration file, then to the
    built-in defaults.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='YAML configuration file')
    common.add_argument('--log-file', metavar='PATH', help='Write the log to this file')
    common.add_argument('--verbose', action='store_true', help='Debug logging')
    common.add_argument('--out', metavar='DIR', help='Output directory')
    common.add_argument('--ro', type=float, help='Occupied threshold (default 0.65)')
    common.add_argument('--rf', type=float, help='Free threshold (default 0.35)')

    parser = argparse.ArgumentParser(
        prog='ogfmap',
        description='Occupancy Grid Filter: correlated occupancy maps by sequential probit updates',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
examples:
  sim2d --samples 300 --seed 7 --out results/     one batch of 300 samples on the bundled map
  sim2d --trials 10 --workers 4 --out results/    full matrix of sample counts
  compare --samples 300                           OGF vs single-sweep EP vs converged EP
  map3d --poses p.csv --scans s.csv --dims 12 12 4 --resolution 0.2 --out room/
        """,
    )
    parser.add_argument('--version', action='version', version=f'ogfmap {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='command')

    # ── sim2d ────────────────────────────────────────────────────────────────
    p = sub.add_parser('sim2d', parents=[common], help='2-D accuracy experiment (OGF, EP, log-odds)')
    p.add_argument('--map', metavar='PATH', help="Ground-truth map ('#' occupied, '.' free); default bundled lab25")
    p.add_argument('--samples', type=int, nargs='+', metavar='N', help='Sample count(s)')
    p.add_argument('--trials', type=int, help='Trials per sample count')
    p.add_argument('--seed', type=int, help='Base seed; trial k uses seed + k')
    p.add_argument('--sigma', type=float, help='Kernel standard deviation, cells')
    p.add_argument('--ep-tol', type=float, help='EP convergence tolerance')
    p.add_argument('--ep-max-sweeps', type=int, help='EP sweep budget')
    p.add_argument('--workers', type=int, help='Threads over the experiment matrix')
    p.add_argument('--no-timings', action='store_true', help='Write 0 for wall times (byte-identical reruns)')
    p.set_defaults(handler=cmd_sim2d)

    # ── compare ──────────────────────────────────────────────────────────────
    p = sub.add_parser('compare', parents=[common], help='OGF against single-sweep and converged EP')
    p.add_argument('--map', metavar='PATH', help='Ground-truth map; default bundled lab25')
    p.add_argument('--samples', type=int, default=300, metavar='N', help='Sample count (default 300)')
    p.add_argument('--seed', type=int, help='Seed')
    p.add_argument('--sigma', type=float, help='Kernel standard deviation, cells')
    p.add_argument('--ep-tol', type=float, help='EP convergence tolerance')
    p.add_argument('--ep-max-sweeps', type=int, help='EP sweep budget')
    p.set_defaults(handler=cmd_compare)

    # ── map3d ────────────────────────────────────────────────────────────────
    p = sub.add_parser('map3d', parents=[common], help='3-D map from pose-stamped scans')
    p.add_argument('--poses', required=True, metavar='PATH', help='Poses CSV t,x,y,z,qw,qx,qy,qz')
    p.add_argument('--scans', required=True, metavar='PATH', help='Scans CSV t,x,y,z (sensor frame)')
    p.add_argument('--dims', type=int, nargs=3, metavar=('NX', 'NY', 'NZ'), help='Cells per axis')
    p.add_argument('--resolution', type=float, help='Cell size, meters (default 0.2)')
    p.add_argument('--origin', type=float, nargs=3, metavar=('X', 'Y', 'Z'), help='Center of cell (0, 0, 0)')
    p.add_argument('--sigma', type=float, help='Kernel standard deviation, meters (default resolution/2)')
    p.add_argument('--cutoff-radius', type=float, help='Correlation cutoff, meters (default 3 cells)')
    p.add_argument('--backend', choices=['auto', 'dense', 'sparse'], help='Covariance storage')
    p.add_argument('--max-range', type=float, help='Sensor range, meters (default 100)')
    p.add_argument('--baseline', action='store_true', help='Also build the log-odds map')
    p.set_defaults(handler=cmd_map3d)

    return parser


# ── CLI dispatcher ───────────────────────────────────────────────────────────

def run_cli(args: argparse.Namespace) -> int:
    """Dispatch parsed args to the cmd_* function of the subcommand."""
    handler = getattr(args, 'handler', None)
    if handler is None:
        make_parser().print_help()
        return EXIT_USAGE
    return handler(args)


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return run_cli(args)
    except (EpPathologyError, NonFiniteStateError) as e:
        print(f'Error: {e}', file=sys.stderr)
        return EXIT_PATHOLOGY
    except (OSError, ValueError) as e:
        print(f'Error: {e}', file=sys.stderr)
        return EXIT_USAGE
