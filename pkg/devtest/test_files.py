import numpy as np
import pytest

from ogfmap import files
from ogfmap.cloud3d import Pose
from ogfmap.files import FormatError
from ogfmap.grid import GridLattice, Measurement, TernaryMap, Thresholds, classify
from ogfmap.kernel import KernelConfig, build_prior
from ogfmap.ogf import ogf_process


def test_ground_truth_roundtrip(tmp_path):
    grid = np.array([[1, -1, -1], [-1, 1, 1]], dtype=np.int8)
    path = tmp_path / 'gt.txt'
    files.write_ground_truth(path, grid)
    assert path.read_text() == "#..\n.##\n"
    np.testing.assert_array_equal(files.read_ground_truth(path), grid)


def test_ground_truth_errors_name_the_line(tmp_path):
    path = tmp_path / 'bad.txt'
    path.write_text("#.\n\n.o\n")
    with pytest.raises(FormatError) as err:
        files.read_ground_truth(path)
    assert err.value.line == 3
    assert str(err.value).startswith(f"{path}:3:")
    with pytest.raises(FormatError, match='empty'):
        files.parse_ground_truth("\n\n")


def test_measurement_log_roundtrip(tmp_path):
    batch = [Measurement(4, 1, 0), Measurement(0, -1, 0), Measurement(7, -1, 2)]
    path = tmp_path / 'meas.csv'
    files.write_measurements(path, batch)
    assert path.read_text().splitlines()[:2] == ['t,cell,y', '0,4,1']
    assert files.read_measurements(path, GridLattice((8,))) == batch
    with pytest.raises(FormatError, match=':2:'):
        files.read_measurements(path, GridLattice((4,)))


def test_poses_roundtrip_and_validation(tmp_path):
    poses = [Pose(1.5, (0.1, 0.2, 0.3), (0.0, 0.0, 0.0, 1.0)), Pose(0.5, (1.0, 2.0, 3.0))]
    path = tmp_path / 'poses.csv'
    files.write_poses(path, poses)
    loaded = files.read_poses(path)
    assert [p.time for p in loaded] == [0.5, 1.5]
    np.testing.assert_array_equal(loaded[1].position, [0.1, 0.2, 0.3])
    assert loaded[1].orientation == (0.0, 0.0, 0.0, 1.0)

    path.write_text("t,x,y,z,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n1,0,0,0,0.5,0,0,0\n")
    with pytest.raises(FormatError, match=':3:.*norm'):
        files.read_poses(path)
    path.write_text("time,x,y,z,qw,qx,qy,qz\n")
    with pytest.raises(FormatError, match=':1:'):
        files.read_poses(path)
    path.write_text("t,x,y,z,qw,qx,qy,qz\n0,0,zero,0,1,0,0,0\n")
    with pytest.raises(FormatError, match='non-numeric'):
        files.read_poses(path)


def test_scans_group_by_time(tmp_path):
    path = tmp_path / 'scans.csv'
    files.write_scans(path, [(0.0, np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])), (1.0, np.array([[0.5, 0.5, 0.5]]))])
    scans = files.read_scans(path)
    assert [t for t, _ in scans] == [0.0, 1.0]
    assert scans[0][1].shape == (2, 3)
    np.testing.assert_array_equal(scans[1][1], [[0.5, 0.5, 0.5]])

    path.write_text("t,x,y,z\n1,0,0,0\n0.5,1,1,1\n")
    with pytest.raises(FormatError, match=':3:.*goes back'):
        files.read_scans(path)


def test_map_csv_pads_coordinates(tmp_path):
    lattice = GridLattice((2, 3))
    tmap = TernaryMap([1, 0, -1, 0, 0, 1], lattice)
    path = tmp_path / 'map.csv'
    files.write_map_csv(path, tmap)
    table = files.read_map_csv(path)
    assert list(table.columns) == files.MAP_COLUMNS
    assert (table['cz'] == 0).all()
    assert table.loc[5, ['cx', 'cy']].tolist() == [1, 2]
    assert table['state'].tolist() == [1, 0, -1, 0, 0, 1]
    assert table['mean'].isna().all()


def test_latent_csv_keeps_full_precision(tmp_path):
    prior = build_prior(GridLattice((3, 3)), KernelConfig(sigma=1.0))
    lmap, _ = ogf_process(prior, [Measurement(4, 1), Measurement(0, -1)])
    path = tmp_path / 'latent.csv'
    files.write_latent_csv(path, lmap, classify(lmap, Thresholds()))
    table = files.read_map_csv(path)
    np.testing.assert_array_equal(table['mean'].to_numpy(), lmap.mean)
    np.testing.assert_array_equal(table['variance'].to_numpy(), lmap.variance())


def test_ply_lists_occupied_centers(tmp_path):
    lattice = GridLattice((2, 2, 2), 0.5)
    tmap = TernaryMap([1, 0, 0, 0, 0, 0, -1, 1], lattice)
    path = tmp_path / 'occ.ply'
    assert files.write_ply(path, tmap) == 2
    lines = path.read_text().splitlines()
    assert 'element vertex 2' in lines
    body = lines[lines.index('end_header') + 1:]
    assert body == ['0.000000 0.000000 0.000000', '0.500000 0.500000 0.500000']


def test_json_is_deterministic(tmp_path):
    a, b = tmp_path / 'a.json', tmp_path / 'b.json'
    files.write_json(a, {'z': np.int64(3), 'a': np.arange(2), 'm': {'y': 1.5, 'b': np.float64(2.0)}})
    files.write_json(b, {'m': {'b': 2.0, 'y': 1.5}, 'a': [0, 1], 'z': 3})
    assert a.read_bytes() == b.read_bytes()
    assert files.read_json(a)['a'] == [0, 1]


@pytest.mark.parametrize('backend,cutoff', [('dense', float('inf')), ('sparse', 1.5)])
def test_checkpoint_roundtrip(tmp_path, backend, cutoff):
    prior = build_prior(GridLattice((4, 3, 2), 0.5), KernelConfig(sigma=0.5, cutoff_radius=cutoff), backend)
    lmap, _ = ogf_process(prior, [Measurement(5, 1), Measurement(17, -1)])
    path = tmp_path / 'state.ogf'
    files.save_checkpoint(path, lmap)
    loaded = files.load_checkpoint(path)
    assert loaded.backend == backend
    assert loaded.lattice == lmap.lattice
    np.testing.assert_array_equal(loaded.mean, lmap.mean)
    np.testing.assert_array_equal(loaded.cov.to_dense(), lmap.cov.to_dense())
    assert loaded.meta['sigma'] == 0.5
    assert loaded.meta['cutoff_radius'] == cutoff


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / 'x.ogf'
    path.write_bytes(b'not a checkpoint\n')
    with pytest.raises(FormatError, match='OGF1'):
        files.load_checkpoint(path)
