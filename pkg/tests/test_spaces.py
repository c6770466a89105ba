import numpy as np
import pytest

from poroflux import (
    GridSpec,
    MaterialParams,
    Q1,
    Q2,
    StateVector,
    build_grid,
    build_spaces,
    interpolate_field,
    norm,
)
from poroflux.forms import assemble_elastic, assemble_mass
from poroflux.spaces import ElementFamily, FieldSpace


def test_element_family_validation():
    assert Q1.degree == 1 and Q2.degree == 2
    with pytest.raises(ValueError):
        ElementFamily("Q3")


def test_free_dof_hand_count():
    # 2x(2+2) grid, Q2 fluid velocity: 5x5 nodes = 25 per component.
    # Followers: the x=1 column (5 nodes); Dirichlet: the y=-1 row
    # (4 more after the shared corner follows its leader).
    # 25 - 5 - 4 = 16 free nodes, 32 vector dofs.
    grid = build_grid(GridSpec(2, 2, 2, 2))
    spaces = build_spaces(grid)
    assert spaces.V.n_free_nodes == 16
    assert spaces.n_v == 32
    assert spaces.n_u == 32          # same layout, clamped at the top
    assert spaces.n_p == 4           # Q1: 3x3 = 9, -3 followers, -2 dirichlet
    assert spaces.n_pi == 6          # Q1, periodic only: 9 - 3 followers


def test_u_and_w_share_one_map():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    spaces = build_spaces(grid)
    assert spaces.space("u") is spaces.space("w")


def test_unsupported_pairings_rejected():
    grid = build_grid(GridSpec(3, 2, 2, 2))
    with pytest.raises(ValueError, match="Taylor-Hood"):
        build_spaces(grid, v_family=Q1, pi_family=Q1)
    with pytest.raises(ValueError, match="Taylor-Hood"):
        build_spaces(grid, v_family=Q2, pi_family=Q2)
    # Q2 biot pressure is a supported choice
    spaces = build_spaces(grid, p_b_family=Q2)
    assert spaces.P.degree == 2


def test_interpolate_zero_and_nodal_reproduction():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    spaces = build_spaces(grid)
    zeros = interpolate_field(spaces, "p_b", lambda x: 0.0)
    assert np.all(zeros == 0.0)

    def f(x):
        return np.sin(2 * np.pi * x[0]) * (1.0 - x[1])

    coeffs = interpolate_field(spaces, "p_b", f)
    space = spaces.P
    free = ~space.is_follower & ~space.is_dirichlet
    expected = np.array([f(x) for x in space.node_coords[free]])
    assert np.allclose(coeffs, expected, atol=1e-14)


def test_interpolate_rejects_nonperiodic_and_dirichlet_violation():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    spaces = build_spaces(grid)
    with pytest.raises(ValueError, match="periodic"):
        interpolate_field(spaces, "p_b", lambda x: x[0])
    with pytest.raises(ValueError, match="Dirichlet"):
        interpolate_field(spaces, "p_b", lambda x: 1.0 + 0.0 * x[0])


def test_norm_kinds(small_setup):
    grid, spaces, params, forms, iface = small_setup
    z = np.zeros(spaces.n_p)
    for kind in ("L2", "H1semi"):
        assert norm(spaces, "p_b", kind, z) == 0.0
    assert norm(spaces, "u", "energy", np.zeros(spaces.n_u), params=params) == 0.0
    with pytest.raises(ValueError):
        norm(spaces, "p_b", "energy", z, params=params)
    with pytest.raises(ValueError):
        norm(spaces, "p_b", "L2", np.zeros(3))
    with pytest.raises(ValueError):
        norm(spaces, "u", "energy", np.zeros(spaces.n_u))


def test_constant_field_norms_on_unconstrained_gram():
    # constants are periodic but not Dirichlet-admissible: test on the raw map
    grid = build_grid(GridSpec(2, 2, 2, 2))
    raw = FieldSpace(grid.biot, 2, 2, dirichlet=None)
    c = np.array([0.4, -0.3])
    coeffs = raw.interpolate(lambda x: c)
    M = assemble_mass(raw)
    # |c| sqrt(|Omega_b|) with |Omega_b| = 1
    assert np.isclose(np.sqrt(coeffs @ (M @ coeffs)), np.linalg.norm(c), atol=1e-13)
    # rigid translations are in the kernel of the symmetric gradient
    A = assemble_elastic(raw, lam=2.0, mu=1.1)
    assert np.allclose(A @ coeffs, 0.0, atol=1e-12)


def test_interpolate_then_norm_matches_hand_integral():
    # f = (1-y)^2 is in the Q2 space; ||f||_L2^2 = int (1-y)^4 = 1/5
    grid = build_grid(GridSpec(2, 2, 3, 2))
    spaces = build_spaces(grid)
    coeffs = interpolate_field(spaces, "p_b", lambda x: (1.0 - x[1]) ** 2)
    spaces_q2 = build_spaces(grid, p_b_family=Q2)
    coeffs = interpolate_field(spaces_q2, "p_b", lambda x: (1.0 - x[1]) ** 2)
    got = norm(spaces_q2, "p_b", "L2", coeffs)
    assert abs(got - 1.0 / np.sqrt(5.0)) < 1e-10


def test_grams_are_spd(small_setup):
    grid, spaces, params, forms, iface = small_setup
    for M in (forms.mass_u, forms.mass_p, forms.mass_f, forms.mass_pi):
        D = M.toarray()
        assert np.allclose(D, D.T, atol=1e-14)
        assert np.linalg.eigvalsh(D).min() > 0


def test_periodic_constraint_idempotent():
    grid = build_grid(GridSpec(3, 3, 2, 2))
    spaces = build_spaces(grid)
    for space in (spaces.U, spaces.P, spaces.V, spaces.PI):
        leaders = space.leader
        assert np.array_equal(space.target[leaders], space.target)
        assert not np.any(space.is_follower[leaders])


def test_pi_space_has_no_dirichlet():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    spaces = build_spaces(grid)
    assert not spaces.PI.is_dirichlet.any()


def test_statevector_validation(small_setup):
    grid, spaces, params, forms, iface = small_setup
    st = StateVector.zeros(spaces)
    st.validate(spaces)
    bad = st.copy()
    bad.u = np.zeros(3)
    with pytest.raises(ValueError, match="shape"):
        bad.validate(spaces)
    bad = st.copy()
    bad.v = np.full(spaces.n_v, np.nan)
    with pytest.raises(ValueError, match="finite"):
        bad.validate(spaces)
