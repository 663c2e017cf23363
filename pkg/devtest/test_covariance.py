import numpy as np

from ogfmap.covariance import DenseCovariance, StencilCovariance, stencil_offsets
from ogfmap.grid import GridLattice
from ogfmap.kernel import KernelConfig, build_prior


def test_stencil_offsets_symmetric():
    lattice = GridLattice((10, 10, 10), 0.2)
    offsets = stencil_offsets(lattice, 0.6)
    as_set = {tuple(o) for o in offsets.tolist()}
    assert (0, 0, 0) in as_set
    assert all(tuple(-x for x in o) in as_set for o in as_set)
    assert np.all(np.linalg.norm(offsets, axis=1) <= 3.0 + 1e-9)
    assert (3, 0, 0) in as_set and (2, 2, 2) not in as_set


def test_stencil_respects_small_axes():
    offsets = stencil_offsets(GridLattice((10, 10, 2), 1.0), 3.0)
    assert np.abs(offsets[:, 2]).max() == 1


def _pair(lattice, cutoff, sigma):
    cfg = KernelConfig(sigma=sigma, cutoff_radius=cutoff)
    return build_prior(lattice, cfg, 'sparse').cov, build_prior(lattice, cfg, 'dense').cov


def test_downdate_matches_dense_on_stored_pairs(rng):
    lattice = GridLattice((7, 6, 4), 1.0)
    for cell in rng.choice(lattice.n_cells, size=5, replace=False):
        sparse, dense = _pair(lattice, 2.0, 1.0)
        stored = sparse.to_dense() != 0.0
        beta = rng.uniform(0.05, 0.5)
        _, values = sparse.column(cell)
        sparse.rank1_downdate(cell, values, beta)
        _, dense_values = dense.column(cell)
        dense.rank1_downdate(cell, dense_values, beta)
        result = sparse.to_dense()
        np.testing.assert_allclose(result, np.where(stored, dense.to_dense(), 0.0), rtol=0, atol=1e-14)
        np.testing.assert_array_equal(result, result.T)


def test_column_reads_neighbors_only():
    lattice = GridLattice((5, 5), 1.0)
    sparse, dense = _pair(lattice, 1.5, 1.0)
    idx, values = sparse.column(12)
    assert len(idx) == 9
    np.testing.assert_allclose(values, dense.to_dense()[idx, 12], rtol=1e-12)
    idx, values = sparse.column(0)
    assert sorted(idx.tolist()) == [0, 1, 5, 6]


def test_symmetrize_reports_asymmetry():
    lattice = GridLattice((4, 4), 1.0)
    sparse, _ = _pair(lattice, 1.5, 1.0)
    lin, valid = sparse.neighbors(5)
    slot = int(np.flatnonzero(valid & (lin == 6))[0])
    sparse.data[5, slot] += 1e-6
    assert abs(sparse.symmetrize() - 1e-6) < 1e-12
    dense_matrix = sparse.to_dense()
    np.testing.assert_array_equal(dense_matrix, dense_matrix.T)

    dense = DenseCovariance(np.array([[1.0, 0.5], [0.5 + 1e-7, 1.0]]))
    assert abs(dense.symmetrize() - 1e-7) < 1e-15
    assert dense.matrix[0, 1] == dense.matrix[1, 0]


def test_floor_diagonal_counts_clamps():
    dense = DenseCovariance(np.diag([1.0, -1e-15, 1e-13]))
    assert dense.floor_diagonal(np.arange(3), 1e-12) == 2
    np.testing.assert_array_equal(dense.diagonal(), [1.0, 1e-12, 1e-12])

    lattice = GridLattice((3,), 1.0)
    stencil = StencilCovariance(lattice, 1.0)
    stencil.data[:, stencil.center] = [0.5, 0.0, 0.5]
    assert stencil.floor_diagonal(np.array([0, 1, 2]), 1e-12) == 1
    assert stencil.variance(1) == 1e-12


def test_copy_is_independent():
    lattice = GridLattice((4, 4), 1.0)
    sparse, _ = _pair(lattice, 1.5, 1.0)
    clone = sparse.copy()
    clone.data[:] = 0.0
    assert sparse.variance(0) > 0.0
