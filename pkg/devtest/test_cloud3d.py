import math

import numpy as np
import pytest

from ogfmap.baseline import LogOddsMap, logodds_classify
from ogfmap.cloud3d import (MEASURED_FREE, MEASURED_OCCUPIED, NEVER, CellObservationLedger, Pose, ScanFrame,
                            assemble_frames, build_map_3d, extract_measurements, nearest_pose, ray_traverse,
                            synthetic_room)
from ogfmap.grid import FREE, OCCUPIED, UNKNOWN, GridLattice, OutOfLatticeError, Thresholds
from ogfmap.kernel import KernelConfig
from ogfmap.sim2d import map_difference


def _yaw(deg):
    half = math.radians(deg) / 2
    return (math.cos(half), 0.0, 0.0, math.sin(half))


# ── Poses ────────────────────────────────────────────────────────────────────

def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Pose(0.0, (0, 0, 0), (1.0, 0.1, 0.0, 0.0))
    with pytest.raises(ValueError):
        Pose(0.0, (0, 0), (1.0, 0.0, 0.0, 0.0))
    Pose(0.0, (0, 0, 0), (1.0 + 5e-7, 0.0, 0.0, 0.0))


def test_pose_yaw_rotates_x_into_y():
    pose = Pose(0.0, (1.0, 2.0, 3.0), _yaw(90))
    np.testing.assert_allclose(pose.to_world([[1.0, 0.0, 0.0]]), [[1.0, 3.0, 3.0]], atol=1e-12)
    np.testing.assert_allclose(pose.to_sensor(pose.to_world([[0.3, -0.2, 0.5]])), [[0.3, -0.2, 0.5]], atol=1e-12)


def test_nearest_pose():
    poses = [Pose(float(t), (0, 0, 0)) for t in range(3)]
    assert nearest_pose(poses, 0.5).time == 0.0
    assert nearest_pose(poses, 1.6).time == 2.0
    assert nearest_pose(poses, -3.0).time == 0.0
    assert nearest_pose(poses, 9.0).time == 2.0
    with pytest.raises(ValueError):
        nearest_pose([], 0.0)


def test_assemble_frames_sorts_poses():
    poses = [Pose(2.0, (2, 0, 0)), Pose(0.0, (0, 0, 0))]
    frames = assemble_frames(poses, [(0.4, np.zeros((1, 3))), (1.7, np.zeros((2, 3)))])
    assert [f.pose.time for f in frames] == [0.0, 2.0]
    assert [f.time for f in frames] == [0.4, 1.7]
    assert frames[1].points.shape == (2, 3)


# ── Ledger ───────────────────────────────────────────────────────────────────

def test_ledger_transitions():
    ledger = CellObservationLedger(2)
    assert ledger.accept(0, -1)
    assert not ledger.accept(0, -1)
    assert ledger.accept(0, 1)
    assert not ledger.accept(0, 1)
    assert not ledger.accept(0, -1)
    assert ledger.accept(1, 1)
    assert not ledger.accept(1, -1)
    assert (ledger.accepted, ledger.dropped) == (3, 3)
    assert list(ledger.flags) == [MEASURED_OCCUPIED, MEASURED_OCCUPIED]
    assert ledger.counts() == {'never': 0, 'free': 0, 'occupied': 2}
    assert CellObservationLedger(3).counts()['never'] == 3
    assert NEVER == 0 and MEASURED_FREE == 1


# ── Ray traversal ────────────────────────────────────────────────────────────

def test_axis_aligned_ray():
    lattice = GridLattice((4, 4, 4), 1.0, (0.5, 0.5, 0.5))
    cells = ray_traverse(lattice, (0.5, 0.5, 0.5), (3.5, 0.5, 0.5))
    assert cells == [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)]
    cells = ray_traverse(lattice, (3.5, 2.5, 0.5), (3.5, 0.2, 0.5))
    assert cells == [(3, 2, 0), (3, 1, 0), (3, 0, 0)]


def test_ray_ending_on_a_face_stops_in_lower_cell():
    lattice = GridLattice((4, 4, 4))
    assert ray_traverse(lattice, (0.0, 0.0, 0.0), (1.5, 0.0, 0.0)) == [(0, 0, 0), (1, 0, 0)]
    assert ray_traverse(lattice, (2.0, 0.0, 0.0), (0.5, 0.0, 0.0)) == [(2, 0, 0), (1, 0, 0), (0, 0, 0)]
    assert lattice.world_to_coords((1.5, 0.0, 0.0)) == (1, 0, 0)
    assert lattice.world_to_coords((0.5, 0.0, 0.0)) == (0, 0, 0)


def test_zero_length_ray():
    lattice = GridLattice((4, 4, 4))
    assert ray_traverse(lattice, (1.2, 2.1, 0.3), (1.2, 2.1, 0.3)) == [(1, 2, 0)]


def test_ray_origin_outside():
    with pytest.raises(OutOfLatticeError):
        ray_traverse(GridLattice((4, 4, 4)), (-2.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def test_ray_leaving_lattice_stops_at_edge():
    lattice = GridLattice((5, 3, 3))
    cells = ray_traverse(lattice, (0.0, 1.0, 1.0), (40.0, 1.0, 1.0))
    assert cells == [(i, 1, 1) for i in range(5)]


def _crossing_length(lattice, coords, p0, p1):
    """Length of the segment p0 -> p1 inside the cell box, slab method."""
    lo = np.asarray(lattice.origin) + (np.asarray(coords) - 0.5) * lattice.resolution
    hi = lo + lattice.resolution
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for a in range(3):
        if abs(d[a]) < 1e-15:
            if not lo[a] <= p0[a] <= hi[a]:
                return 0.0
            continue
        ta, tb = sorted(((lo[a] - p0[a]) / d[a], (hi[a] - p0[a]) / d[a]))
        t0, t1 = max(t0, ta), min(t1, tb)
    return max(0.0, t1 - t0) * float(np.linalg.norm(d))


def test_traversal_against_dense_sampling():
    lattice = GridLattice((8, 7, 6), 0.3, (0.1, -0.2, 0.4))
    lo, hi = lattice.bounds()
    rng = np.random.default_rng(42)
    step = lattice.resolution / 100
    for _ in range(1000):
        p0 = rng.uniform(lo + 1e-6, hi - 1e-6)
        p1 = rng.uniform(lo + 1e-6, hi - 1e-6)
        cells = ray_traverse(lattice, p0, p1)

        assert cells[0] == lattice.world_to_coords(p0)
        assert cells[-1] == lattice.world_to_coords(p1)
        assert len(set(cells)) == len(cells)
        for a, b in zip(cells, cells[1:]):
            assert sum(abs(x - y) for x, y in zip(a, b)) == 1

        length = float(np.linalg.norm(p1 - p0))
        n = max(1, int(math.ceil(length / step)))
        sampled = []
        for t in np.linspace(0.0, 1.0, n + 1):
            c = lattice.world_to_coords(p0 + t * (p1 - p0))
            if not sampled or sampled[-1] != c:
                sampled.append(c)
        position = {c: k for k, c in enumerate(cells)}
        order = [position[c] for c in sampled]
        assert order == sorted(order)
        for c in set(cells) - set(sampled):
            assert _crossing_length(lattice, c, p0, p1) <= step * (1 + 1e-6)


# ── Measurement extraction ───────────────────────────────────────────────────

def _line_lattice():
    return GridLattice((10, 3, 3), 1.0)


def test_extract_free_cells_then_hit():
    lattice = _line_lattice()
    frame = ScanFrame(Pose(0.0, (0.0, 1.0, 1.0)), [[5.0, 0.0, 0.0]])
    ledger = CellObservationLedger(lattice.n_cells)
    batch = extract_measurements(frame, lattice, ledger, time=4)
    assert [(lattice.unravel(m.cell)[0], m.label) for m in batch] == [(0, -1), (1, -1), (2, -1), (3, -1),
                                                                      (4, -1), (5, 1)]
    assert all(m.time == 4 for m in batch)

    assert extract_measurements(frame, lattice, ledger) == []
    shorter = ScanFrame(frame.pose, [[3.0, 0.0, 0.0]])
    batch = extract_measurements(shorter, lattice, ledger)
    assert [(lattice.unravel(m.cell)[0], m.label) for m in batch] == [(3, 1)]


def test_extract_beyond_max_range_is_free_only():
    lattice = _line_lattice()
    frame = ScanFrame(Pose(0.0, (0.0, 1.0, 1.0)), [[5.0, 0.0, 0.0]])
    batch = extract_measurements(frame, lattice, CellObservationLedger(lattice.n_cells), max_range=2.2)
    assert [(lattice.unravel(m.cell)[0], m.label) for m in batch] == [(0, -1), (1, -1), (2, -1)]


def test_extract_return_outside_lattice():
    lattice = _line_lattice()
    frame = ScanFrame(Pose(0.0, (0.0, 1.0, 1.0)), [[20.0, 0.0, 0.0]])
    batch = extract_measurements(frame, lattice, CellObservationLedger(lattice.n_cells))
    assert len(batch) == 10
    assert all(m.label == -1 for m in batch)


def test_extract_applies_orientation():
    lattice = GridLattice((3, 10, 3), 1.0)
    frame = ScanFrame(Pose(0.0, (1.0, 0.0, 1.0), _yaw(90)), [[4.0, 0.0, 0.0]])
    batch = extract_measurements(frame, lattice, CellObservationLedger(lattice.n_cells))
    assert [lattice.unravel(m.cell) for m in batch if m.label > 0] == [(1, 4, 1)]


# ── Whole pipeline ───────────────────────────────────────────────────────────

def test_no_scans_leaves_everything_unknown():
    lattice = GridLattice((4, 4, 3), 0.2)
    _, tmap, stats = build_map_3d([], lattice, KernelConfig(sigma=0.1), Thresholds())
    assert stats['unknown_cells'] == lattice.n_cells
    assert stats['measurements_taken'] == 0
    assert stats['scans'] == 0


@pytest.fixture(scope='module')
def room():
    return synthetic_room()


@pytest.fixture(scope='module')
def room_map(room):
    record = []
    baseline = LogOddsMap(room.lattice)
    lmap, tmap, stats = build_map_3d(room.frames, room.lattice, KernelConfig(sigma=0.1), Thresholds(),
                                     backend='dense', baseline=baseline, record=record)
    return lmap, tmap, stats, record, baseline


def test_synthetic_room_layout(room):
    n = room.lattice.n_cells
    parts = [room.shell_cells, room.interior_cells, room.exterior_cells]
    assert sum(len(p) for p in parts) == n
    assert len(np.unique(np.concatenate(parts))) == n
    assert set(room.wall_cells) <= set(room.shell_cells)
    assert room.beams == len(room.wall_cells)
    assert len(room.frames) == 2
    assert room.frames[1].time == pytest.approx(1.01)


def test_room_walls_are_occupied(room, room_map):
    _, tmap, stats, record, _ = room_map
    assert np.all(tmap.states[room.wall_cells] == OCCUPIED)
    occupied = {m.cell for m in record if m.label > 0}
    assert occupied == set(room.wall_cells.tolist())
    free = {m.cell for m in record if m.label < 0}
    assert free <= set(room.interior_cells.tolist())
    assert np.all(tmap.states[sorted(free)] == FREE)
    assert stats['measurements_taken'] == len(record)
    assert stats['backend'] == 'dense'


def test_room_exterior_stays_unknown(room, room_map):
    _, tmap, stats, record, _ = room_map
    assert not {m.cell for m in record} & set(room.exterior_cells.tolist())
    exterior = tmap.states[room.exterior_cells]
    assert not np.any(exterior == FREE)
    assert np.mean(exterior == UNKNOWN) >= 0.95
    assert stats['unknown_cells'] > 0


def test_replayed_scans_add_nothing(room):
    ledger = CellObservationLedger(room.lattice.n_cells)
    for frame in room.frames:
        extract_measurements(frame, room.lattice, ledger)
    accepted = ledger.accepted
    for frame in room.frames:
        assert extract_measurements(frame, room.lattice, ledger) == []
    assert ledger.accepted == accepted


def test_filter_fills_gaps_the_baseline_leaves():
    room = synthetic_room(thin=True)
    baseline = LogOddsMap(room.lattice)
    _, tmap, _ = build_map_3d(room.frames, room.lattice, KernelConfig(sigma=0.1), Thresholds(),
                              backend='dense', baseline=baseline)
    base = logodds_classify(baseline, Thresholds())
    ogf_walls = int(np.sum(tmap.states[room.wall_cells] == OCCUPIED))
    base_walls = int(np.sum(base.states[room.wall_cells] == OCCUPIED))
    assert base_walls < len(room.wall_cells)
    assert ogf_walls > base_walls


def test_sparse_backend_tracks_dense(room, room_map):
    dense_map, dense_tmap, _, _, _ = room_map
    sparse_map, sparse_tmap, stats = build_map_3d(room.frames, room.lattice,
                                                  KernelConfig(sigma=0.1, cutoff_radius=0.6), Thresholds(),
                                                  backend='sparse')
    assert stats['backend'] == 'sparse'
    assert np.mean(sparse_tmap.states != dense_tmap.states) < 0.005
    assert map_difference(sparse_map.mean, dense_map.mean) < 0.02
