import itertools

import numpy as np
import pytest
from scipy.interpolate import lagrange

from poroflux import GridSpec, MaterialParams, StateVector, build_grid, build_spaces
from poroflux import assemble_forms, assemble_interface, assemble_x_gram
from poroflux.forms import dissipation, generator_action, slip_seminorm_sq
from poroflux.grid import interface_map
from poroflux.spaces import FieldSpace, interpolate_field
from conftest import random_state


# ---------------------------------------------------------------------------
# independent dense assembly oracle: scipy Lagrange polynomials, 4-point
# Gauss, plain python loops over cells and quadrature points

def oracle_tabulate(deg, d, pts):
    nodes = np.linspace(0.0, 1.0, deg + 1)
    polys, ders = [], []
    for i in range(deg + 1):
        e = np.zeros(deg + 1)
        e[i] = 1.0
        poly = lagrange(nodes, e)
        polys.append(poly)
        ders.append(poly.deriv())
    idxs = list(itertools.product(range(deg + 1), repeat=d))
    vals = np.zeros((len(pts), len(idxs)))
    grads = np.zeros((len(pts), len(idxs), d))
    for j, multi in enumerate(idxs):
        for q, x in enumerate(pts):
            v = 1.0
            for a, ia in enumerate(multi):
                v *= polys[ia](x[a])
            vals[q, j] = v
            for g in range(d):
                dv = 1.0
                for a, ia in enumerate(multi):
                    dv *= ders[ia](x[a]) if a == g else polys[ia](x[a])
                grads[q, j, g] = dv
    return vals, grads


def oracle_quad(d, n=4):
    x1, w1 = np.polynomial.legendre.leggauss(n)
    x1 = 0.5 * (x1 + 1.0)
    w1 = 0.5 * w1
    pts = np.array(list(itertools.product(x1, repeat=d)))
    w = np.array([np.prod(c) for c in itertools.product(w1, repeat=d)])
    return pts, w


def oracle_dense(space, kind, other=None, lam=0.0, mu=0.0):
    """Dense assembly of one form by per-cell quadrature loops."""
    d = space.dim
    pts, w = oracle_quad(d)
    vals, grads = oracle_tabulate(space.degree, d, pts)
    grads = grads / space.spacings
    det = float(np.prod(space.spacings))
    nc = space.n_components

    if other is not None:
        vals_o, grads_o = oracle_tabulate(other.degree, d, pts)
        grads_o = grads_o / other.spacings

    out_rows = space.n_dofs if other is None else other.n_dofs
    out = np.zeros((out_rows, space.n_dofs))

    def dof(sp, node_target, comp):
        return node_target * sp.n_components + comp

    for cell in range(space.mesh.cells.shape[0]):
        t = space.cell_targets(np.array([cell]))[0]
        t_o = other.cell_targets(np.array([cell]))[0] if other is not None else t
        for q in range(len(pts)):
            scale = w[q] * det
            for i in range(len(t_o) if other is not None else len(t)):
                ti = t_o[i] if other is not None else t[i]
                if ti < 0:
                    continue
                for j in range(len(t)):
                    tj = t[j]
                    if tj < 0:
                        continue
                    if kind == "mass":
                        for a in range(nc):
                            out[dof(space, ti, a), dof(space, tj, a)] += (
                                scale * vals[q, i] * vals[q, j])
                    elif kind == "stiffness":
                        out[ti, tj] += scale * grads[q, i] @ grads[q, j]
                    elif kind == "elastic":
                        for a in range(d):
                            for b in range(d):
                                Du = np.zeros((d, d))
                                Dv = np.zeros((d, d))
                                for k in range(d):
                                    Du[b, k] += 0.5 * grads[q, j, k]
                                    Du[k, b] += 0.5 * grads[q, j, k]
                                    Dv[a, k] += 0.5 * grads[q, i, k]
                                    Dv[k, a] += 0.5 * grads[q, i, k]
                                val = 2.0 * mu * np.tensordot(Du, Dv) + \
                                    lam * grads[q, j, b] * grads[q, i, a]
                                out[ti * d + a, tj * d + b] += scale * val
                    elif kind == "div":
                        # rows: scalar space `other`, cols: vector `space`
                        for b in range(d):
                            out[ti, tj * d + b] += scale * vals_o[q, i] * grads[q, j, b]
    return out


@pytest.mark.parametrize("spec", [GridSpec(2, 2, 2, 2), GridSpec(3, 2, 2, 2)])
def test_dense_oracle_interior_forms(spec):
    grid = build_grid(spec)
    spaces = build_spaces(grid)
    params = MaterialParams(lam=2.0, mu=1.1, alpha=0.8, c0=0.5, k=0.6, nu=1.3)
    forms = assemble_forms(grid, spaces, params)

    assert np.abs(forms.mass_u.toarray()
                  - oracle_dense(spaces.U, "mass")).max() < 1e-12
    assert np.abs(forms.mass_p.toarray()
                  - oracle_dense(spaces.P, "mass")).max() < 1e-12
    assert np.abs(forms.M_p.toarray()
                  - params.c0 * oracle_dense(spaces.P, "mass")).max() < 1e-12
    assert np.abs(forms.K_p_hat.toarray()
                  - oracle_dense(spaces.P, "stiffness")).max() < 1e-12
    assert np.abs(forms.A_E.toarray()
                  - oracle_dense(spaces.U, "elastic", lam=params.lam, mu=params.mu)
                  ).max() < 1e-11
    assert np.abs(forms.A_v.toarray()
                  - 2.0 * params.nu * oracle_dense(spaces.V, "elastic", lam=0.0, mu=0.5)
                  ).max() < 1e-11
    assert np.abs(forms.C_alpha.toarray()
                  - params.alpha * oracle_dense(spaces.U, "div", other=spaces.P)
                  ).max() < 1e-12
    assert np.abs(forms.B.toarray()
                  + oracle_dense(spaces.V, "div", other=spaces.PI)).max() < 1e-12


def test_dense_oracle_interface_forms():
    grid = build_grid(GridSpec(2, 3, 2, 2))
    spaces = build_spaces(grid)
    params = MaterialParams(beta=1.7, nu=1.3)
    iface = assemble_interface(grid, spaces, params)
    d = 2

    # oracle: 1D facet quadrature over the two interface segments
    x1, w1 = np.polynomial.legendre.leggauss(4)
    x1, w1 = 0.5 * (x1 + 1.0), 0.5 * w1
    imap = interface_map(grid)
    cells_b = grid.gamma_i_biot[1][imap.biot_facets]
    cells_f = grid.gamma_i_fluid[1][imap.fluid_facets]

    def traces(space, cells, vert):
        pts = np.column_stack([x1, np.full_like(x1, vert)])
        vals, _ = oracle_tabulate(space.degree, d, pts)
        return vals

    h = 1.0 / grid.spec.n_lat
    NB = np.zeros((spaces.n_p, spaces.n_u))
    SWV = np.zeros((spaces.n_u, spaces.n_v))
    vb = traces(spaces.P, cells_b, 0.0)
    ub = traces(spaces.U, cells_b, 0.0)
    vf = traces(spaces.V, cells_f, 1.0)
    for cb, cf in zip(cells_b, cells_f):
        tp = spaces.P.cell_targets(np.array([cb]))[0]
        tu = spaces.U.cell_targets(np.array([cb]))[0]
        tv = spaces.V.cell_targets(np.array([cf]))[0]
        for q in range(len(x1)):
            scale = w1[q] * h
            for i, ti in enumerate(tp):
                if ti < 0:
                    continue
                for j, tj in enumerate(tu):
                    if tj < 0:
                        continue
                    NB[ti, tj * d + 1] += scale * vb[q, i] * ub[q, j]
            for i, ti in enumerate(tu):
                if ti < 0:
                    continue
                for j, tj in enumerate(tv):
                    if tj < 0:
                        continue
                    SWV[ti * d, tj * d] += params.beta * scale * ub[q, i] * vf[q, j]
    assert np.abs(iface.N_b.toarray() - NB).max() < 1e-12
    assert np.abs(iface.S_wv.toarray() - SWV).max() < 1e-12


def test_elastic_shear_example(small_setup):
    # u = (x_d - 1, 0): D(u) has only 1/2 off-diagonal entries, div u = 0,
    # so a_E(u, u) = mu |Omega_b|
    grid, spaces, params, forms, iface = small_setup
    u = interpolate_field(spaces, "u", lambda x: np.array([x[1] - 1.0, 0.0]))
    assert abs(u @ (forms.A_E @ u) - params.mu) < 1e-12


def test_random_pressure_stiffness_matches_cell_loop(mid_setup):
    grid, spaces, params, forms, iface = mid_setup
    rng = np.random.default_rng(2)
    q = rng.standard_normal(spaces.n_p)
    quad = q @ (forms.K_p @ q)
    assert quad >= 0
    # brute-force cell loop: |grad p_h|^2 by quadrature
    pts, w = oracle_quad(2, n=3)
    _, grads = oracle_tabulate(spaces.P.degree, 2, pts)
    grads = grads / spaces.P.spacings
    det = float(np.prod(spaces.P.spacings))
    nodal = spaces.P.gather(q)[..., 0]
    total = 0.0
    for cell in range(grid.biot.cells.shape[0]):
        for qq in range(len(pts)):
            g = grads[qq].T @ nodal[cell]
            total += w[qq] * det * (g @ g)
    assert abs(quad - params.k * total) < 1e-10 * max(1.0, quad)


def test_interface_slip_examples(small_setup):
    grid, spaces, params, forms, iface = small_setup
    # matching traces: w from the solid side, v from the fluid side, both
    # equal to sin(2 pi x) at the interface
    w = interpolate_field(
        spaces, "w", lambda x: np.array([np.sin(2 * np.pi * x[0]) * (1 - x[1]), 0.0]))
    v = interpolate_field(
        spaces, "v", lambda x: np.array([np.sin(2 * np.pi * x[0]) * (1 + x[1]) ** 2, 0.0]))
    st = StateVector.zeros(spaces)
    st.w, st.v = w, v
    # traces differ only through the profiles' interface values, both = sin
    assert abs(slip_seminorm_sq(iface, st)) < 1e-12

    # unit tangential slip: quadratic form = beta |Gamma_I| = beta
    st2 = StateVector.zeros(spaces)
    st2.v = interpolate_field(
        spaces, "v", lambda x: np.array([(1 + x[1]) ** 2, 0.0]))
    assert abs(slip_seminorm_sq(iface, st2) - params.beta) < 1e-12


def test_interface_pressure_pairing_unit(small_setup):
    grid, spaces, params, forms, iface = small_setup
    p = interpolate_field(spaces, "p_b", lambda x: 1.0 - x[1])
    v = interpolate_field(spaces, "v", lambda x: np.array([0.0, x[1] + 1.0]))
    assert abs(p @ (iface.N_f @ v) - 1.0) < 1e-13


def test_x_gram_structure(small_setup):
    grid, spaces, params, forms, iface = small_setup
    X = assemble_x_gram(spaces, params, forms)
    st = StateVector.zeros(spaces)
    assert st.concat() @ (X @ st.concat()) == 0.0
    expected = np.zeros_like(X.toarray())
    n_u, n_p = spaces.n_u, spaces.n_p
    expected[:n_u, :n_u] = forms.A_E.toarray()
    expected[n_u:2 * n_u, n_u:2 * n_u] = params.rho_b * forms.mass_u.toarray()
    expected[2 * n_u:2 * n_u + n_p, 2 * n_u:2 * n_u + n_p] = \
        params.c0 * forms.mass_p.toarray()
    expected[2 * n_u + n_p:, 2 * n_u + n_p:] = params.rho_f * forms.mass_f.toarray()
    assert np.abs(X.toarray() - expected).max() < 1e-13


def test_x_gram_constant_velocity_block():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    params = MaterialParams(rho_b=1.7)
    raw = FieldSpace(grid.biot, 2, 2, dirichlet=None)
    from poroflux.forms import assemble_mass
    c = np.array([0.4, -0.3])
    coeffs = raw.interpolate(lambda x: c)
    M = assemble_mass(raw)
    assert np.isclose(params.rho_b * coeffs @ (M @ coeffs),
                      params.rho_b * (c @ c), atol=1e-13)


def test_x_gram_degenerate_pressure_block():
    grid = build_grid(GridSpec(2, 2, 2, 2))
    spaces = build_spaces(grid)
    forms = assemble_forms(grid, spaces, MaterialParams(c0=0.0))
    n_u, n_p = spaces.n_u, spaces.n_p
    block = forms.X_gram.toarray()[2 * n_u:2 * n_u + n_p, 2 * n_u:2 * n_u + n_p]
    assert np.all(block == 0.0)


@pytest.mark.parametrize("c0", [1.0, 0.25, 0.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_skew_cancellation(c0, seed):
    # (A_h y, y)_X collapses to minus the dissipation, to round-off, for any
    # coefficient vector -- the discrete shadow of dissipativity
    grid = build_grid(GridSpec(2, 3, 2, 3))
    spaces = build_spaces(grid)
    params = MaterialParams(rho_b=1.3, rho_f=0.8, lam=2.0, mu=1.5,
                            alpha=0.9, c0=c0, k=0.7, nu=1.1, beta=2.5)
    forms = assemble_forms(grid, spaces, params)
    iface = assemble_interface(grid, spaces, params)
    rng = np.random.default_rng(seed)
    st = StateVector(u=rng.standard_normal(spaces.n_u),
                     w=rng.standard_normal(spaces.n_u),
                     p=rng.standard_normal(spaces.n_p),
                     v=rng.standard_normal(spaces.n_v),
                     pi=np.zeros(spaces.n_pi))
    L = generator_action(forms, iface, st)
    pairing = st.u @ L[0] + st.w @ L[1] + st.p @ L[2] + st.v @ L[3]
    d = dissipation(forms, iface, st)
    assert d >= 0
    assert abs(pairing + d) < 1e-10 * max(1.0, abs(d))
    assert pairing <= 0


def test_coupling_blocks_are_antitransposes(small_setup):
    grid, spaces, params, forms, iface = small_setup
    # C_alpha appears as +C_alpha (pressure row) and -C_alpha^T (momentum
    # row); in particular q-row block = -(xi-row block)^T
    q_row = forms.C_alpha.toarray()
    xi_row = -forms.C_alpha.T.toarray()
    assert np.abs(q_row + xi_row.T).max() == 0.0
    # slip Gram on the combined (w, v) trace dofs is symmetric PSD
    S = np.block([[iface.S_ww.toarray(), -iface.S_wv.toarray()],
                  [-iface.S_wv.T.toarray(), iface.S_vv.toarray()]])
    assert np.abs(S - S.T).max() < 1e-14
    assert np.linalg.eigvalsh(S).min() > -1e-12


def test_divergence_free_annihilates_b(mid_setup):
    grid, spaces, params, forms, iface = mid_setup
    from poroflux.timestepper import project_divergence_free
    rng = np.random.default_rng(4)
    v = project_divergence_free(spaces, forms,
                                forms.mass_f @ rng.standard_normal(spaces.n_v))
    assert np.abs(forms.B @ v).max() < 1e-11


def test_material_params_validation():
    with pytest.raises(ValueError, match="c0"):
        MaterialParams(c0=-1.0)
    with pytest.raises(ValueError, match="k"):
        MaterialParams(k=0.0)
    with pytest.raises(ValueError, match="beta"):
        MaterialParams(beta=-2.0)
    MaterialParams(c0=0.0)  # degenerate storage is admissible
