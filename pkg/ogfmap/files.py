"""
Readers and writers for every file ogfmap consumes or produces.

Text inputs (ground-truth maps, poses, scans, measurement logs) are validated
while reading; problems raise FormatError naming the file and line.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ogfmap.cloud3d import Pose
from ogfmap.covariance import DenseCovariance, StencilCovariance
from ogfmap.grid import OCCUPIED, GridLattice, LatentMap, Measurement, TernaryMap
from ogfmap.utils import get_logger

logger = get_logger('ogfmap').getChild('files')

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b'OGF1\n'
MAP_COLUMNS = ['cx', 'cy', 'cz', 'state', 'mean', 'variance']
POSE_HEADER = ['t', 'x', 'y', 'z', 'qw', 'qx', 'qy', 'qz']
SCAN_HEADER = ['t', 'x', 'y', 'z']
MEASUREMENT_HEADER = ['t', 'cell', 'y']


class FormatError(ValueError):
    """An input file does not follow its format."""

    def __init__(self, path: PathLike, line: Optional[int], message: str) -> None:
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


# ── Ground-truth maps ────────────────────────────────────────────────────────

def parse_ground_truth(text: str, source: str = '<string>') -> np.ndarray:
    """
    Parse an ASCII map: one row per line, '#' occupied (+1), '.' free (-1).

    Blank lines are ignored; every row must have the same width.

    Returns:
        int8 array of shape (rows, columns)
    """
    rows: List[List[int]] = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        bad = set(line) - {'#', '.'}
        if bad:
            raise FormatError(source, n, f"unexpected characters {''.join(sorted(bad))!r}, use '#' and '.'")
        if rows and len(line) != len(rows[0]):
            raise FormatError(source, n, f"row has {len(line)} cells, expected {len(rows[0])}")
        rows.append([1 if c == '#' else -1 for c in line])
    if not rows:
        raise FormatError(source, None, "map is empty")
    return np.array(rows, dtype=np.int8)


def read_ground_truth(path: PathLike) -> np.ndarray:
    return parse_ground_truth(Path(path).read_text(), str(path))


def write_ground_truth(path: PathLike, grid: np.ndarray) -> None:
    lines = [''.join('#' if v > 0 else '.' for v in row) for row in np.asarray(grid)]
    Path(path).write_text('\n'.join(lines) + '\n')


# ── CSV helpers ──────────────────────────────────────────────────────────────

def _csv_rows(path: PathLike, header: Sequence[str]) -> Iterator[Tuple[int, List[float]]]:
    """Yield (line number, float values) for each data row, after checking the header."""
    with open(path, newline='') as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != list(header):
            raise FormatError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise FormatError(path, reader.line_num, f"non-numeric field in {row}")
            if not np.all(np.isfinite(values)):
                raise FormatError(path, reader.line_num, f"non-finite value in {row}")
            yield reader.line_num, values


def _write_csv(path: PathLike, header: Sequence[str], rows) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)


# ── Poses and scans ──────────────────────────────────────────────────────────

def read_poses(path: PathLike) -> List[Pose]:
    """Poses CSV `t,x,y,z,qw,qx,qy,qz`, sorted by time on return."""
    poses = []
    for line, (t, x, y, z, qw, qx, qy, qz) in _csv_rows(path, POSE_HEADER):
        try:
            poses.append(Pose(t, (x, y, z), (qw, qx, qy, qz)))
        except ValueError as e:
            raise FormatError(path, line, str(e))
    if not poses:
        raise FormatError(path, None, "no poses")
    return sorted(poses, key=lambda p: p.time)


def write_poses(path: PathLike, poses: Sequence[Pose]) -> None:
    _write_csv(path, POSE_HEADER,
               ([repr(p.time), *map(repr, p.position.tolist()), *map(repr, p.orientation)] for p in poses))


def read_scans(path: PathLike) -> List[Tuple[float, np.ndarray]]:
    """
    Scans CSV `t,x,y,z`, sensor-frame returns grouped by ascending t.

    Returns:
        List of (t, points) with points of shape (M, 3)
    """
    scans: List[Tuple[float, List[List[float]]]] = []
    for line, (t, x, y, z) in _csv_rows(path, SCAN_HEADER):
        if scans and t < scans[-1][0]:
            raise FormatError(path, line, f"scan time {t} goes back from {scans[-1][0]}")
        if not scans or t != scans[-1][0]:
            scans.append((t, []))
        scans[-1][1].append([x, y, z])
    return [(t, np.array(points, dtype=float)) for t, points in scans]


def write_scans(path: PathLike, scans: Sequence[Tuple[float, np.ndarray]]) -> None:
    _write_csv(path, SCAN_HEADER,
               ([repr(float(t)), *map(repr, p)] for t, points in scans for p in np.asarray(points).tolist()))


# ── Measurement logs ─────────────────────────────────────────────────────────

def write_measurements(path: PathLike, batch: Sequence[Measurement]) -> None:
    _write_csv(path, MEASUREMENT_HEADER, ((m.time, m.cell, m.label) for m in batch))


def read_measurements(path: PathLike, lattice: Optional[GridLattice] = None) -> List[Measurement]:
    """Measurement log `t,cell,y`; cells are checked against lattice when given."""
    batch = []
    for line, (t, cell, y) in _csv_rows(path, MEASUREMENT_HEADER):
        if not (t.is_integer() and cell.is_integer()):
            raise FormatError(path, line, "t and cell must be integers")
        try:
            meas = Measurement(int(cell), int(y), int(t))
            if lattice is not None:
                lattice.check_cell(meas.cell)
        except ValueError as e:
            raise FormatError(path, line, str(e))
        batch.append(meas)
    return batch


# ── Map exports ──────────────────────────────────────────────────────────────

def map_table(tmap: TernaryMap,
              mean: Optional[np.ndarray] = None,
              variance: Optional[np.ndarray] = None) -> pd.DataFrame:
    """One row per cell: cell coordinates (zero-padded to 3 axes), state, mean, variance."""
    lattice = tmap.lattice
    coords = np.zeros((lattice.n_cells, 3), dtype=np.int64)
    coords[:, :lattice.ndim] = np.stack(np.unravel_index(np.arange(lattice.n_cells), lattice.dims), axis=1)
    nan = np.full(lattice.n_cells, np.nan)
    return pd.DataFrame({
        'cx': coords[:, 0],
        'cy': coords[:, 1],
        'cz': coords[:, 2],
        'state': tmap.states.astype(int),
        'mean': nan if mean is None else np.asarray(mean, dtype=float),
        'variance': nan if variance is None else np.asarray(variance, dtype=float),
    }, columns=MAP_COLUMNS)


def write_map_csv(path: PathLike,
                  tmap: TernaryMap,
                  mean: Optional[np.ndarray] = None,
                  variance: Optional[np.ndarray] = None) -> None:
    map_table(tmap, mean, variance).to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Wrote {path}")


def write_latent_csv(path: PathLike, lmap: LatentMap, tmap: TernaryMap) -> None:
    write_map_csv(path, tmap, lmap.mean, lmap.variance())


def read_map_csv(path: PathLike) -> pd.DataFrame:
    table = pd.read_csv(path, float_precision='round_trip')
    if list(table.columns) != MAP_COLUMNS:
        raise FormatError(path, 1, f"expected header {','.join(MAP_COLUMNS)}")
    return table


def write_ply(path: PathLike, tmap: TernaryMap) -> int:
    """ASCII PLY point cloud of occupied cell centers; returns the vertex count."""
    lattice = tmap.lattice
    cells = np.flatnonzero(tmap.states == OCCUPIED)
    points = np.zeros((cells.size, 3))
    if cells.size:
        points[:, :lattice.ndim] = np.stack([lattice.cell_to_world(c) for c in cells])
    with open(path, 'w') as f:
        f.write('ply\nformat ascii 1.0\n')
        f.write(f'element vertex {cells.size}\n')
        f.write('property float x\nproperty float y\nproperty float z\nend_header\n')
        for x, y, z in points:
            f.write(f'{x:.6f} {y:.6f} {z:.6f}\n')
    logger.info(f"Wrote {path} ({cells.size} occupied cells)")
    return int(cells.size)


def write_json(path: PathLike, data: Dict[str, Any]) -> None:
    """JSON with sorted keys, so identical content gives identical bytes."""
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')
    logger.info(f"Wrote {path}")


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__} to JSON")


# ── Checkpoints ──────────────────────────────────────────────────────────────

def save_checkpoint(path: PathLike, lmap: LatentMap) -> None:
    """
    Write a LatentMap as: the OGF1 magic line, one JSON header line, then the
    mean vector and the covariance storage as consecutive .npy arrays.
    """
    lattice = lmap.lattice
    header: Dict[str, Any] = {
        'dims': list(lattice.dims),
        'resolution': lattice.resolution,
        'origin': list(lattice.origin),
        'backend': lmap.backend,
        'clamped_total': lmap.clamped_total,
        'meta': {k: v for k, v in lmap.meta.items() if v != float('inf')},
    }
    if isinstance(lmap.cov, StencilCovariance):
        header['cutoff_radius'] = lmap.cov.cutoff_radius
        storage = lmap.cov.data
    else:
        storage = lmap.cov.to_dense()
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True, default=_json_default).encode() + b'\n')
        np.save(f, lmap.mean, allow_pickle=False)
        np.save(f, storage, allow_pickle=False)
    logger.info(f"Saved checkpoint {path} ({lmap.backend}, {lattice.n_cells} cells)")


def load_checkpoint(path: PathLike) -> LatentMap:
    with open(path, 'rb') as f:
        if f.readline() != CHECKPOINT_MAGIC:
            raise FormatError(path, 1, "not an OGF1 checkpoint")
        try:
            header = json.loads(f.readline())
            lattice = GridLattice(tuple(header['dims']), header['resolution'], tuple(header['origin']))
            mean = np.load(f, allow_pickle=False)
            storage = np.load(f, allow_pickle=False)
        except (KeyError, ValueError, EOFError) as e:
            raise FormatError(path, 2, f"corrupt checkpoint: {e}")
    if header['backend'] == 'sparse':
        cov = StencilCovariance(lattice, header['cutoff_radius'], storage)
    else:
        cov = DenseCovariance(storage)
    meta = header.get('meta', {})
    meta.setdefault('cutoff_radius', header.get('cutoff_radius', float('inf')))
    return LatentMap(mean, cov, lattice, int(header.get('clamped_total', 0)), meta)
