import numpy as np
import pytest

from poroflux import GridSpec, build_grid, interface_map


def test_smallest_grid_counts():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    assert grid.n_cells == 8
    assert grid.gamma_i_biot[0].shape[0] == 2
    assert grid.gamma_i_fluid[0].shape[0] == 2
    assert len(interface_map(grid)) == 2


def test_3d_counts_and_bruteforce_interface_match():
    grid = build_grid(GridSpec(3, 4, 3, 2))
    assert grid.n_cells == 4**2 * 5 == 80
    imap = interface_map(grid)
    assert len(imap) == 16
    # brute-force oracle: exhaustive centroid comparison of all pairs
    bc = grid.biot.verts[grid.gamma_i_biot[0]].mean(axis=1)
    fc = grid.fluid.verts[grid.gamma_i_fluid[0]].mean(axis=1)
    for ib, jf in zip(imap.biot_facets, imap.fluid_facets):
        assert np.linalg.norm(bc[ib] - fc[jf]) < 1e-14
    # and every biot facet has exactly one partner
    assert sorted(imap.biot_facets) == list(range(16))
    assert sorted(imap.fluid_facets) == list(range(16))


@pytest.mark.parametrize("bad", [
    dict(dimension=1, n_lat=2, n_b=2, n_f=2),
    dict(dimension=4, n_lat=2, n_b=2, n_f=2),
    dict(dimension=2, n_lat=1, n_b=2, n_f=2),
    dict(dimension=2, n_lat=2, n_b=1, n_f=2),
    dict(dimension=2, n_lat=2, n_b=2, n_f=0),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        GridSpec(**bad)


@pytest.mark.parametrize("spec", [GridSpec(2, 3, 2, 4), GridSpec(3, 2, 2, 3)])
def test_lateral_pairing_involution(spec):
    grid = build_grid(spec)
    for mesh, pairs in ((grid.biot, grid.lateral_pairs_biot),
                        (grid.fluid, grid.lateral_pairs_fluid)):
        assert pairs, "boundary exists, pairing must not be empty"
        for v, w in pairs.items():
            assert pairs[w] == v  # involution
            diff = np.abs(mesh.verts[v] - mesh.verts[w])
            lateral = diff[:-1]
            assert abs(diff[-1]) < 1e-14
            assert np.isclose(sorted(lateral)[-1], 1.0)
            assert np.sum(lateral > 1e-14) == 1  # one lateral translation only


def test_facet_sets_disjoint():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    gb = {tuple(f) for f in grid.gamma_b[0]}
    gib = {tuple(f) for f in grid.gamma_i_biot[0]}
    assert not gb & gib
    gf = {tuple(f) for f in grid.gamma_f[0]}
    gif = {tuple(f) for f in grid.gamma_i_fluid[0]}
    assert not gf & gif


@pytest.mark.parametrize("spec", [GridSpec(2, 2, 2, 2), GridSpec(2, 5, 3, 4),
                                  GridSpec(3, 3, 2, 2)])
def test_total_volume(spec):
    grid = build_grid(spec)
    vol = (np.prod(grid.biot.spacings) * len(grid.biot.cells)
           + np.prod(grid.fluid.spacings) * len(grid.fluid.cells))
    assert abs(vol - 2.0) < 1e-13


def test_interface_pair_coincident_endpoints():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    imap = interface_map(grid)
    for ib, jf in zip(imap.biot_facets, imap.fluid_facets):
        vb = np.sort(grid.biot.verts[grid.gamma_i_biot[0][ib]], axis=0)
        vf = np.sort(grid.fluid.verts[grid.gamma_i_fluid[0][jf]], axis=0)
        assert np.allclose(vb, vf, atol=1e-14)
    assert np.allclose(imap.normal_fluid, [0.0, 1.0])
    assert np.allclose(imap.normal_biot, [0.0, -1.0])


def test_interface_map_roundtrip_identity():
    grid = build_grid(GridSpec(3, 3, 2, 2))
    imap = interface_map(grid)
    fwd = dict(zip(imap.biot_facets, imap.fluid_facets))
    rev = dict(zip(imap.fluid_facets, imap.biot_facets))
    for b, f in fwd.items():
        assert rev[f] == b


def test_corrupt_grid_rejected():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    facets, parents = grid.gamma_i_fluid
    grid.gamma_i_fluid = (facets[:-1], parents[:-1])
    with pytest.raises(ValueError, match="corrupt|match"):
        interface_map(grid)


def test_shifted_interface_rejected():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    grid.fluid.verts = grid.fluid.verts + np.array([0.01, 0.0])
    with pytest.raises(ValueError):
        interface_map(grid)
