"""
From pose-stamped point clouds to a 3-D occupancy map.

Every return is traced from the sensor position to the return point through
the lattice. Cells crossed before the return cell become free candidates, the
return cell an occupied candidate, and the CellObservationLedger keeps at most
one measurement per cell (a free cell may still be re-measured as occupied).
The accepted measurements of each scan are folded into the filter in order.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ogfmap.baseline import LogOddsMap, logodds_process
from ogfmap.grid import GridLattice, LatentMap, Measurement, OutOfLatticeError, TernaryMap, Thresholds, classify
from ogfmap.kernel import DEFAULT_DENSE_LIMIT, KernelConfig, build_prior
from ogfmap.ogf import VARIANCE_FLOOR, ogf_process
from ogfmap.utils import get_logger

logger = get_logger('ogfmap').getChild('cloud3d')

NEVER = 0
MEASURED_FREE = 1
MEASURED_OCCUPIED = 2

QUATERNION_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Sensor pose.

    Attributes:
        time: Seconds
        position: Sensor origin in world coordinates, meters
        orientation: Unit quaternion (w, x, y, z), sensor to world
    """
    time: float
    position: np.ndarray
    orientation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        position = np.array(self.position, dtype=float).reshape(-1)
        if position.shape != (3,) or not np.all(np.isfinite(position)):
            raise ValueError(f"Pose position must be 3 finite numbers, got {self.position}")
        q = tuple(float(c) for c in self.orientation)
        if len(q) != 4:
            raise ValueError(f"Pose orientation must be a quaternion (w, x, y, z), got {self.orientation}")
        norm = math.sqrt(sum(c * c for c in q))
        if abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise ValueError(f"Pose quaternion norm is {norm:.9f}, expected 1")
        position.setflags(write=False)
        object.__setattr__(self, 'position', position)
        object.__setattr__(self, 'orientation', q)
        object.__setattr__(self, 'time', float(self.time))

    @property
    def rotation(self) -> Rotation:
        w, x, y, z = self.orientation
        return Rotation.from_quat([x, y, z, w])

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Sensor-frame points (M, 3) to world coordinates."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if not len(points):
            return points
        return self.rotation.apply(points) + self.position

    def to_sensor(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if not len(points):
            return points
        return self.rotation.inv().apply(points - self.position)


@dataclass(frozen=True, eq=False)
class ScanFrame:
    """Returns of one scan, sensor frame, with the pose they were taken from."""
    pose: Pose
    points: np.ndarray
    time: Optional[float] = None

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("Scan points must be finite")
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)
        if self.time is None:
            object.__setattr__(self, 'time', self.pose.time)


class CellObservationLedger:
    """
    Which cells have already produced a measurement, and of which kind.

    Transitions: never -> free, never -> occupied, free -> occupied. Occupied is
    absorbing.
    """

    def __init__(self, n_cells: int) -> None:
        self.flags = np.zeros(n_cells, dtype=np.int8)
        self.accepted = 0
        self.dropped = 0

    def accept(self, cell: int, label: int) -> bool:
        """Record a candidate; True if it becomes a measurement."""
        flag = self.flags[cell]
        if flag == NEVER or (flag == MEASURED_FREE and label > 0):
            self.flags[cell] = MEASURED_OCCUPIED if label > 0 else MEASURED_FREE
            self.accepted += 1
            return True
        self.dropped += 1
        return False

    def counts(self) -> Dict[str, int]:
        return {
            'never': int(np.count_nonzero(self.flags == NEVER)),
            'free': int(np.count_nonzero(self.flags == MEASURED_FREE)),
            'occupied': int(np.count_nonzero(self.flags == MEASURED_OCCUPIED)),
        }


def ray_traverse(lattice: GridLattice, origin, endpoint) -> List[Tuple[int, ...]]:
    """
    Cells crossed by the segment origin -> endpoint, in order (Amanatides-Woo).

    Consecutive cells share a face. The list starts with the cell holding
    origin and ends with the cell holding endpoint, or at the last cell inside
    the lattice when the segment leaves it.

    Raises:
        OutOfLatticeError: If origin is outside the lattice
    """
    start = lattice.world_to_coords(origin)
    if start is None:
        raise OutOfLatticeError(f"Ray origin {tuple(np.asarray(origin, dtype=float))} outside the lattice")
    # grid units, cell k spans (k, k + 1]
    g0 = lattice.to_grid(origin) + 0.5
    g1 = lattice.to_grid(endpoint) + 0.5
    end = np.ceil(g1 - 1.0).astype(int)
    d = g1 - g0

    cell = np.array(start)
    step = np.zeros(lattice.ndim, dtype=int)
    t_max = np.full(lattice.ndim, math.inf)
    t_delta = np.full(lattice.ndim, math.inf)
    for a in range(lattice.ndim):
        if d[a] > 0:
            step[a] = 1
            t_max[a] = (cell[a] + 1 - g0[a]) / d[a]
            t_delta[a] = 1.0 / d[a]
        elif d[a] < 0:
            step[a] = -1
            t_max[a] = (cell[a] - g0[a]) / d[a]
            t_delta[a] = -1.0 / d[a]

    dims = lattice.dims
    cells = [tuple(int(c) for c in cell)]
    for _ in range(int(np.abs(end - cell).sum())):
        if np.array_equal(cell, end):
            break
        a = int(np.argmin(t_max))
        if t_max[a] > 1.0 + 1e-9:
            break
        cell[a] += step[a]
        if not 0 <= cell[a] < dims[a]:
            break
        t_max[a] += t_delta[a]
        cells.append(tuple(int(c) for c in cell))
    return cells


def extract_measurements(frame: ScanFrame,
                         lattice: GridLattice,
                         ledger: CellObservationLedger,
                         max_range: float = 100.0,
                         time: int = 0) -> List[Measurement]:
    """
    Turn one scan into ledger-filtered cell measurements, in point order.

    Returns beyond max_range are cut at max_range and, like returns outside
    the lattice, contribute free cells only.
    """
    origin = frame.pose.position
    world = frame.pose.to_world(frame.points)
    ranges = np.linalg.norm(frame.points, axis=1)
    batch: List[Measurement] = []

    for point, r in zip(world, ranges):
        hit = r <= max_range
        end = point if hit else origin + (point - origin) * (max_range / r)
        cells = ray_traverse(lattice, origin, end)
        end_cell = lattice.world_to_coords(end)
        occupied = hit and end_cell is not None and cells[-1] == end_cell

        for coords in (cells[:-1] if occupied else cells):
            cell = lattice.ravel(coords)
            if ledger.accept(cell, -1):
                batch.append(Measurement(cell, -1, time))
        if occupied:
            cell = lattice.ravel(cells[-1])
            if ledger.accept(cell, 1):
                batch.append(Measurement(cell, 1, time))
    return batch


def nearest_pose(poses: Sequence[Pose], t: float) -> Pose:
    """Pose stamped nearest to t; ties go to the earlier pose. Poses must be sorted by time."""
    if not poses:
        raise ValueError("No poses to associate with")
    times = np.array([p.time for p in poses])
    k = int(np.searchsorted(times, t))
    if k == 0:
        return poses[0]
    if k == len(poses):
        return poses[-1]
    return poses[k - 1] if t - times[k - 1] <= times[k] - t else poses[k]


def assemble_frames(poses: Sequence[Pose], scans: Sequence[Tuple[float, np.ndarray]]) -> List[ScanFrame]:
    """Attach the nearest pose to every (time, points) scan."""
    poses = sorted(poses, key=lambda p: p.time)
    return [ScanFrame(nearest_pose(poses, t), points, t) for t, points in scans]


def build_map_3d(scans: Sequence[ScanFrame],
                 lattice: GridLattice,
                 kernel_cfg: KernelConfig,
                 thresholds: Thresholds,
                 backend: str = 'auto',
                 dense_limit: int = DEFAULT_DENSE_LIMIT,
                 max_range: float = 100.0,
                 variance_floor: float = VARIANCE_FLOOR,
                 check_symmetry: bool = False,
                 baseline: Optional[LogOddsMap] = None,
                 record: Optional[List[Measurement]] = None) -> Tuple[LatentMap, TernaryMap, Dict[str, object]]:
    """
    Run the scans through ray traversal, the ledger and the filter, in time order.

    Args:
        scans: Scan frames, processed in the given order
        lattice: The lattice
        kernel_cfg: Prior kernel; a finite cutoff_radius is needed for the sparse backend
        thresholds: Classification thresholds
        backend: 'dense', 'sparse' or 'auto'
        dense_limit: Largest cell count for the dense backend
        max_range: Sensor range, meters
        variance_floor: Lower clamp for posterior variances
        check_symmetry: Symmetrize the covariance after every update and report the
            largest asymmetry seen as stats["max_asymmetry"]
        baseline: Log-odds map fed the same measurements, if given
        record: List collecting every measurement, if given

    Returns:
        (latent map, ternary map, counters)
    """
    lmap = build_prior(lattice, kernel_cfg, backend, dense_limit)
    ledger = CellObservationLedger(lattice.n_cells)
    logger.info(f"3-D map: {lattice.n_cells} cells, {lmap.backend} backend, {len(scans)} scans")

    max_asymmetry = 0.0
    for t, frame in enumerate(scans):
        batch = extract_measurements(frame, lattice, ledger, max_range, t)
        _, diagnostics = ogf_process(lmap, batch, variance_floor, check_symmetry)
        max_asymmetry = max([max_asymmetry] + [d.asymmetry for d in diagnostics])
        if baseline is not None:
            logodds_process(baseline, batch)
        if record is not None:
            record.extend(batch)
        logger.info(f"Scan {t} (t={frame.time:.3f}): {len(frame.points)} returns, "
                    f"{len(batch)} measurements, {ledger.dropped} dropped so far")

    tmap = classify(lmap, thresholds)
    stats: Dict[str, object] = {
        'scans': len(scans),
        'measurements_taken': ledger.accepted,
        'dropped': ledger.dropped,
        **tmap.counts(),
        'backend': lmap.backend,
        'clamped_variances': lmap.clamped_total,
        'max_asymmetry': max_asymmetry,
    }
    return lmap, tmap, stats


# ── Synthetic scene ──────────────────────────────────────────────────────────

@dataclass(eq=False)
class SyntheticRoom:
    """
    A closed box room inside a lattice, scanned from poses in its interior.

    The outermost ring of cells in x and y is exterior; next comes a one-cell
    shell of wall (floor and ceiling use the bottom and top layers) around the
    interior.

    Attributes:
        lattice: The lattice
        poses: Sensor poses, one scan each
        frames: Simulated scans
        wall_cells: Shell cells sharing a face with the interior (the scanned surface)
        shell_cells: All wall cells
        interior_cells: Cells inside the room
        exterior_cells: Cells of the outer ring
    """
    lattice: GridLattice
    poses: List[Pose]
    frames: List[ScanFrame]
    wall_cells: np.ndarray
    shell_cells: np.ndarray
    interior_cells: np.ndarray
    exterior_cells: np.ndarray
    beams: int = 0
    meta: Dict[str, object] = field(default_factory=dict)


def _room_regions(lattice: GridLattice) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    coords = np.stack(np.unravel_index(np.arange(lattice.n_cells), lattice.dims), axis=1)
    x, y, z = coords.T
    nx, ny, nz = lattice.dims
    exterior = (x == 0) | (x == nx - 1) | (y == 0) | (y == ny - 1)
    interior = (x >= 2) & (x <= nx - 3) & (y >= 2) & (y <= ny - 3) & (z >= 1) & (z <= nz - 2)
    shell = ~exterior & ~interior
    return interior, shell, exterior


def synthetic_room(dims: Tuple[int, int, int] = (12, 12, 4),
                   resolution: float = 0.2,
                   positions: Optional[Sequence[Sequence[float]]] = None,
                   yaw_deg: float = 30.0,
                   beams_per_face: int = 1,
                   thin: bool = False) -> SyntheticRoom:
    """
    Scan an axis-aligned box room from inside.

    Each pose sends beams_per_face² beams at every scanned wall face; a beam
    returns just behind the inner face it strikes, so the return cell is the
    wall cell behind that face. Nothing in the room occludes the walls.

    Args:
        dims: Lattice cells per axis, at least (5, 5, 3)
        resolution: Cell size, meters
        positions: Sensor positions as fractions of the interior box (default: two poses)
        yaw_deg: Sensor heading; the first pose uses it, each next one adds 90 degrees
        beams_per_face: Beams per face and axis
        thin: Drop every second beam, in a checkerboard pattern over each wall
    """
    nx, ny, nz = dims
    if nx < 5 or ny < 5 or nz < 3:
        raise ValueError(f"Synthetic room needs dims of at least (5, 5, 3), got {dims}")
    lattice = GridLattice(tuple(dims), resolution)
    interior, shell, exterior = _room_regions(lattice)

    res = lattice.resolution
    lo = np.array([1.5, 1.5, 0.5]) * res
    hi = (np.array(dims) - np.array([2.5, 2.5, 1.5])) * res
    if positions is None:
        positions = [(0.31, 0.37, 0.43), (0.67, 0.58, 0.61)]

    # (wall cell, axis, direction from the interior) for every scanned face
    faces: Dict[int, Tuple[int, int]] = {}
    for cell in np.flatnonzero(interior):
        coords = np.array(lattice.unravel(cell))
        for a in range(3):
            for sign in (-1, 1):
                nb = coords.copy()
                nb[a] += sign
                w = lattice.ravel(nb)
                if shell[w] and w not in faces:
                    faces[w] = (a, sign)
    wall_cells = np.array(sorted(faces), dtype=np.int64)

    sub = (np.arange(beams_per_face) + 0.5) / beams_per_face - 0.5
    targets = []
    for w in wall_cells:
        a, sign = faces[int(w)]
        coords = lattice.unravel(int(w))
        if thin and sum(coords) % 2:
            continue
        center = lattice.cell_to_world(int(w))
        others = [b for b in range(3) if b != a]
        for u in sub:
            for v in sub:
                q = center.copy()
                q[a] -= sign * 0.5 * res
                q[others[0]] += u * res
                q[others[1]] += v * res
                targets.append(q)
    targets = np.array(targets).reshape(-1, 3)

    poses, frames = [], []
    for k, frac in enumerate(positions):
        position = lo + np.asarray(frac, dtype=float) * (hi - lo)
        half = math.radians(yaw_deg + 90.0 * k) / 2.0
        pose = Pose(float(k), position, (math.cos(half), 0.0, 0.0, math.sin(half)))
        direction = targets - position
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        returns = targets + 0.01 * res * direction
        poses.append(pose)
        frames.append(ScanFrame(pose, pose.to_sensor(returns), pose.time + 0.01))

    return SyntheticRoom(lattice=lattice, poses=poses, frames=frames,
                         wall_cells=wall_cells,
                         shell_cells=np.flatnonzero(shell),
                         interior_cells=np.flatnonzero(interior),
                         exterior_cells=np.flatnonzero(exterior),
                         beams=len(targets),
                         meta={'dims': list(dims), 'resolution': res, 'thin': thin,
                               'beams_per_face': beams_per_face})
