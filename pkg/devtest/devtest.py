import sys
import tempfile
from pathlib import Path
sys.path.append("..")
import ogfmap  # noqa: E402
from ogfmap import files  # noqa: E402
from ogfmap.cloud3d import build_map_3d, synthetic_room  # noqa: E402
from ogfmap.config import Settings  # noqa: E402
from ogfmap.grid import Thresholds  # noqa: E402
from ogfmap.kernel import KernelConfig  # noqa: E402
from ogfmap.sim2d import ExperimentConfig, GroundTruthMap, run_experiment, summarize  # noqa: E402
from ogfmap.cli import compare_table  # noqa: E402


def inspect_settings(settings):
    """Print the effective configuration sections."""
    for section in ('thresholds', 'kernel', 'ep', 'sim2d', 'cloud3d'):
        print(f"  [{section}] {settings.get(section)}")


# ── 2-D experiment ─────────────────────────────────────────────────────────────

def run_sim2d(settings, gt):
    cfg = ExperimentConfig.from_settings(settings)
    result = run_experiment(cfg, gt)
    print(summarize(result.results).to_string(float_format=lambda v: f'{v:.4f}'))
    scale_only = result.scale_only_cases
    print(f"scale-only cases: {len(scale_only)}")
    return result


# ── OGF vs EP ──────────────────────────────────────────────────────────────────

def run_compare(settings, gt):
    table = compare_table(gt, 300, ExperimentConfig.from_settings(settings))
    print(table.to_string(float_format=lambda v: f'{v:.3e}'))


# ── 3-D synthetic room ─────────────────────────────────────────────────────────

def run_room(out):
    room = synthetic_room(thin=True)
    lmap, tmap, stats = build_map_3d(room.frames, room.lattice, KernelConfig(sigma=0.1, cutoff_radius=0.6),
                                     Thresholds(), backend='sparse')
    print(stats)
    n_ply = files.write_ply(out / 'room.ply', tmap)
    files.write_latent_csv(out / 'room.csv', lmap, tmap)
    files.save_checkpoint(out / 'room.ogf', lmap)
    print(f"{n_ply} occupied cells of {len(room.wall_cells)} wall cells")


# ── Main ───────────────────────────────────────────────────────────────────────

def main():
    print(f"ogfmap {ogfmap.__version__}")
    settings = Settings.load("config.yaml")
    inspect_settings(settings)

    gt = GroundTruthMap.bundled()
    print(f"map {gt.grid.shape}, occupied {gt.occupied_fraction():.3f}")

    run_sim2d(settings, gt)
    run_compare(settings, gt)

    out = Path(tempfile.mkdtemp(prefix='ogfmap-'))
    run_room(out)
    print(f"outputs in {out}")


if __name__ == '__main__':
    main()
