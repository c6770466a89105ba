import numpy as np
import pytest

from poroflux import (
    GridSpec,
    MaterialParams,
    StateVector,
    assemble_forms,
    assemble_interface,
    build_grid,
    build_spaces,
)
from poroflux.timestepper import project_divergence_free


@pytest.fixture(scope="session")
def small_setup():
    """Smallest admissible 2D stack with generic (non-unit) parameters."""
    grid = build_grid(GridSpec(2, 2, 2, 2))
    spaces = build_spaces(grid)
    params = MaterialParams(rho_b=1.2, rho_f=0.9, lam=2.0, mu=1.1,
                            alpha=0.8, c0=0.5, k=0.6, nu=1.3, beta=1.7)
    forms = assemble_forms(grid, spaces, params)
    iface = assemble_interface(grid, spaces, params)
    return grid, spaces, params, forms, iface


@pytest.fixture(scope="session")
def mid_setup():
    """A 4x3+3 stack, large enough for solver exercises, still fast."""
    grid = build_grid(GridSpec(2, 4, 3, 3))
    spaces = build_spaces(grid)
    params = MaterialParams(rho_b=1.2, rho_f=0.9, lam=2.0, mu=1.1,
                            alpha=0.8, c0=0.5, k=0.6, nu=1.3, beta=1.7)
    forms = assemble_forms(grid, spaces, params)
    iface = assemble_interface(grid, spaces, params)
    return grid, spaces, params, forms, iface


def random_state(spaces, forms, seed=0, zero_pressure=False):
    rng = np.random.default_rng(seed)
    v = project_divergence_free(spaces, forms,
                                forms.mass_f @ rng.standard_normal(spaces.n_v))
    p = np.zeros(spaces.n_p) if zero_pressure else rng.standard_normal(spaces.n_p)
    return StateVector(u=rng.standard_normal(spaces.n_u),
                       w=rng.standard_normal(spaces.n_u),
                       p=p, v=v, pi=np.zeros(spaces.n_pi))
