"""Assembly of every bilinear form of the coupled system as sparse matrices.

All cells of a subdomain are congruent, so each form has a single element
matrix computed once on the reference cell and scattered over the cell list
in ascending cell order (fixed reduction order for reproducibility).
Interface forms integrate traces over the matched facets of the flat
interface; the two sides share their lateral quadrature points exactly, so
no projection is involved.

Matrix orientation conventions (rows = test space, cols = trial space):

* ``C_alpha[i, j] = alpha * (div phi_j^u, psi_i^p)`` -- the two coupling
  blocks of the system are ``+C_alpha`` (pressure row) and ``-C_alpha^T``
  (momentum row);
* ``N_b[i, j] = (phi_j^u . e_d, psi_i^p)_GI`` and likewise ``N_f`` for the
  fluid velocity: sign-flipped transposes pair them in the operator;
* ``B[i, j] = -(eta_i, div phi_j^v)`` so the constraint reads ``B v = 0``;
* slip blocks ``S_ww, S_wv, S_vv`` carry the factor beta and sum over the
  lateral tangent directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import StackedGrid, interface_map
from .spaces import FieldSpace, SpaceSet, StateVector


@dataclass(frozen=True)
class MaterialParams:
    """Dimensionless physical coefficients of the coupled system."""

    rho_b: float = 1.0
    rho_f: float = 1.0
    lam: float = 1.0
    mu: float = 1.0
    alpha: float = 1.0
    c0: float = 1.0
    k: float = 1.0
    nu: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        positive = {
            "rho_b": self.rho_b, "rho_f": self.rho_f, "lambda": self.lam,
            "mu": self.mu, "alpha": self.alpha, "k": self.k, "nu": self.nu,
            "beta": self.beta,
        }
        for name, val in positive.items():
            if not val > 0:
                raise ValueError(f"material parameter {name} must be > 0, got {val}")
        if not self.c0 >= 0:
            raise ValueError(f"storage coefficient c0 must be >= 0, got {self.c0}")


# ---------------------------------------------------------------------------
# scatter machinery

def _dof_grid(targets: np.ndarray, n_comp: int) -> np.ndarray:
    """Expand node targets (cells, nloc) to dof targets (cells, nloc*n_comp)."""
    cells, nloc = targets.shape
    out = targets[:, :, None] * n_comp + np.arange(n_comp)
    out = np.where(targets[:, :, None] >= 0, out, -1)
    return out.reshape(cells, nloc * n_comp)


def scatter(elem: np.ndarray, row_targets: np.ndarray, col_targets: np.ndarray,
            n_row_comp: int, n_col_comp: int, shape: tuple[int, int]) -> sp.csr_matrix:
    """Accumulate one shared element matrix over cells into a CSR matrix.

    Entries hitting eliminated (Dirichlet) dofs are dropped; follower nodes
    have already been redirected to their leaders by the dof maps.
    """
    rows = _dof_grid(row_targets, n_row_comp)
    cols = _dof_grid(col_targets, n_col_comp)
    nc = rows.shape[0]
    r = np.broadcast_to(rows[:, :, None], (nc, rows.shape[1], cols.shape[1]))
    c = np.broadcast_to(cols[:, None, :], (nc, rows.shape[1], cols.shape[1]))
    data = np.broadcast_to(elem[None, :, :], r.shape)
    mask = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix((data[mask], (r[mask], c[mask])), shape=shape)
    return mat.tocsr()


def _phys_grads(space: FieldSpace, grads_ref: np.ndarray) -> np.ndarray:
    return grads_ref / space.spacings


def _cell_vol(space: FieldSpace) -> float:
    return float(np.prod(space.spacings))


# ---------------------------------------------------------------------------
# element matrices (uniform over all cells of a subdomain)

def elem_scalar_mass(space: FieldSpace) -> np.ndarray:
    _, w, vals, _ = space.tables("cell")
    return np.einsum("qi,qj,q->ij", vals, vals, w) * _cell_vol(space)


def elem_scalar_stiffness(space: FieldSpace) -> np.ndarray:
    _, w, _, grads = space.tables("cell")
    g = _phys_grads(space, grads)
    return np.einsum("qia,qja,q->ij", g, g, w) * _cell_vol(space)


def elem_vector_mass(space: FieldSpace) -> np.ndarray:
    return np.kron(elem_scalar_mass(space), np.eye(space.n_components))


def elem_gradient_gram(space: FieldSpace) -> np.ndarray:
    """(grad phi : grad psi) for a vector or scalar field."""
    K = elem_scalar_stiffness(space)
    if space.n_components == 1:
        return K
    return np.kron(K, np.eye(space.n_components))


def elem_elastic(space: FieldSpace, lam: float, mu: float) -> np.ndarray:
    """(2 mu D(phi_j e_b) : D(phi_i e_a) + lam div div) on one cell.

    With G = grad phi_j (trial, component b) and H = grad phi_i (test,
    component a):  2 mu D:D = mu (delta_ab G.H + G_a H_b)  and the volumetric
    part is lam G_b H_a.  Dof layout interleaves components: node*d + comp.
    """
    _, w, _, grads = space.tables("cell")
    g = _phys_grads(space, grads)
    d = space.dim
    nloc = g.shape[1]
    vol = _cell_vol(space)
    gg = np.einsum("qik,qjk,q->ij", g, g, w) * vol
    E = np.zeros((nloc * d, nloc * d))
    for a in range(d):
        for b in range(d):
            blk = mu * np.einsum("qj,qi,q->ij", g[:, :, a], g[:, :, b], w) * vol
            blk = blk + lam * np.einsum("qj,qi,q->ij", g[:, :, b], g[:, :, a], w) * vol
            if a == b:
                blk = blk + mu * gg
            E[a::d, b::d] = blk
    return E


def elem_sym_gradient_gram(space: FieldSpace) -> np.ndarray:
    """(D(phi_j e_b) : D(phi_i e_a)) -- the unweighted symmetric-gradient form."""
    # 2 (D : D) = elem_elastic with lam = 0, mu = 1; halve it.
    return 0.5 * elem_elastic(space, 0.0, 1.0)


def elem_div_coupling(row_scalar: FieldSpace, col_vector: FieldSpace) -> np.ndarray:
    """(div phi_j^vec, psi_i^scal) on one cell; both spaces share the mesh."""
    _, w, vals_s, _ = row_scalar.tables("cell")
    _, _, _, grads_v = col_vector.tables("cell")
    g = _phys_grads(col_vector, grads_v)
    d = col_vector.dim
    nloc_s, nloc_v = vals_s.shape[1], g.shape[1]
    E = np.zeros((nloc_s, nloc_v * d))
    for b in range(d):
        E[:, b::d] = np.einsum("qi,qj,q->ij", vals_s, g[:, :, b], w) * _cell_vol(row_scalar)
    return E


# ---------------------------------------------------------------------------
# interface element matrices

def _facet_area(space: FieldSpace) -> float:
    return float(np.prod(space.spacings[:-1]))


def elem_facet_mass(row_space: FieldSpace, row_face: str,
                    col_space: FieldSpace, col_face: str) -> np.ndarray:
    """Scalar trace mass between two (possibly different) spaces on a facet."""
    _, w_r, vals_r, _ = row_space.tables(row_face)
    _, _, vals_c, _ = col_space.tables(col_face)
    return np.einsum("qi,qj,q->ij", vals_r, vals_c, w_r) * _facet_area(row_space)


def _vector_trace_blocks(base: np.ndarray, d: int, components: list[int],
                         rows_vec: bool, cols_vec: bool) -> np.ndarray:
    """Lift a scalar facet mass to selected vector components."""
    nr, ncl = base.shape
    E = np.zeros((nr * (d if rows_vec else 1), ncl * (d if cols_vec else 1)))
    for comp in components:
        r = slice(comp, None, d) if rows_vec else slice(None)
        c = slice(comp, None, d) if cols_vec else slice(None)
        E[r, c] = base
    return E


@dataclass
class FormSet:
    """All interior bilinear forms, assembled on free dofs.

    Weighted blocks follow the coupled operator: A_E is the elastic
    stiffness, M_b/M_p/M_f the masses weighted by rho_b/c0/rho_f, K_p the
    k-weighted pressure diffusion, C_alpha the alpha-weighted divergence
    coupling, A_v the 2 nu viscous form, B the divergence constraint.
    Unweighted companions (mass_u, mass_p, mass_f, K_p_hat, D_v) serve norms
    and scalings.
    """

    params: MaterialParams
    A_E: sp.csr_matrix
    M_b: sp.csr_matrix
    M_p: sp.csr_matrix
    M_f: sp.csr_matrix
    K_p: sp.csr_matrix
    C_alpha: sp.csr_matrix
    A_v: sp.csr_matrix
    B: sp.csr_matrix
    X_gram: sp.csr_matrix
    mass_u: sp.csr_matrix
    mass_p: sp.csr_matrix
    mass_f: sp.csr_matrix
    mass_pi: sp.csr_matrix
    K_p_hat: sp.csr_matrix
    D_v: sp.csr_matrix


@dataclass
class InterfaceSet:
    """Interface coupling blocks on the shared facets of Gamma_I.

    N_b and N_f realize the pressure-normal pairing; S_ww, S_wv, S_vv the
    beta-weighted tangential-slip form on the combined (w, v) traces.
    """

    N_b: sp.csr_matrix
    N_f: sp.csr_matrix
    S_ww: sp.csr_matrix
    S_wv: sp.csr_matrix
    S_vv: sp.csr_matrix
    area: float


# ---------------------------------------------------------------------------
# assembly entry points

def assemble_mass(space: FieldSpace) -> sp.csr_matrix:
    elem = elem_vector_mass(space) if space.n_components > 1 else elem_scalar_mass(space)
    t = space.cell_targets()
    n = space.n_dofs
    return scatter(elem, t, t, space.n_components, space.n_components, (n, n))


def assemble_stiffness(space: FieldSpace) -> sp.csr_matrix:
    t = space.cell_targets()
    n = space.n_dofs
    return scatter(elem_scalar_stiffness(space), t, t, 1, 1, (n, n))


def assemble_gradient_gram(space: FieldSpace) -> sp.csr_matrix:
    t = space.cell_targets()
    n = space.n_dofs
    return scatter(elem_gradient_gram(space), t, t,
                   space.n_components, space.n_components, (n, n))


def assemble_elastic(space: FieldSpace, lam: float, mu: float) -> sp.csr_matrix:
    t = space.cell_targets()
    n = space.n_dofs
    return scatter(elem_elastic(space, lam, mu), t, t,
                   space.n_components, space.n_components, (n, n))


def assemble_sym_gradient(space: FieldSpace) -> sp.csr_matrix:
    t = space.cell_targets()
    n = space.n_dofs
    return scatter(elem_sym_gradient_gram(space), t, t,
                   space.n_components, space.n_components, (n, n))


def assemble_div_coupling(row_scalar: FieldSpace, col_vector: FieldSpace) -> sp.csr_matrix:
    tr = row_scalar.cell_targets()
    tc = col_vector.cell_targets()
    return scatter(elem_div_coupling(row_scalar, col_vector), tr, tc,
                   1, col_vector.n_components,
                   (row_scalar.n_dofs, col_vector.n_dofs))


def assemble_forms(grid: StackedGrid, spaces: SpaceSet, params: MaterialParams) -> FormSet:
    """Assemble every interior form of the coupled operator."""
    A_E = assemble_elastic(spaces.U, params.lam, params.mu)
    mass_u = assemble_mass(spaces.U)
    mass_p = assemble_mass(spaces.P)
    mass_f = assemble_mass(spaces.V)
    mass_pi = assemble_mass(spaces.PI)
    K_p_hat = assemble_stiffness(spaces.P)
    D_v = assemble_sym_gradient(spaces.V)
    C = assemble_div_coupling(spaces.P, spaces.U)
    B = -assemble_div_coupling(spaces.PI, spaces.V)
    X = assemble_x_gram_blocks(A_E, mass_u, mass_p, mass_f, params)
    return FormSet(
        params=params,
        A_E=A_E,
        M_b=(params.rho_b * mass_u).tocsr(),
        M_p=(params.c0 * mass_p).tocsr(),
        M_f=(params.rho_f * mass_f).tocsr(),
        K_p=(params.k * K_p_hat).tocsr(),
        C_alpha=(params.alpha * C).tocsr(),
        A_v=(2.0 * params.nu * D_v).tocsr(),
        B=B.tocsr(),
        X_gram=X,
        mass_u=mass_u, mass_p=mass_p, mass_f=mass_f, mass_pi=mass_pi,
        K_p_hat=K_p_hat, D_v=D_v,
    )


def assemble_x_gram_blocks(A_E, mass_u, mass_p, mass_f, params: MaterialParams) -> sp.csr_matrix:
    """Block-diagonal Gram of the energy inner product on [u, w, p, v]."""
    return sp.block_diag(
        [A_E, params.rho_b * mass_u, params.c0 * mass_p, params.rho_f * mass_f],
        format="csr",
    )


def assemble_x_gram(spaces: SpaceSet, params: MaterialParams,
                    forms: FormSet | None = None) -> sp.csr_matrix:
    """The energy-inner-product Gram; reuses an existing FormSet if given."""
    if forms is not None:
        return forms.X_gram
    A_E = assemble_elastic(spaces.U, params.lam, params.mu)
    return assemble_x_gram_blocks(A_E, assemble_mass(spaces.U),
                                  assemble_mass(spaces.P), assemble_mass(spaces.V),
                                  params)


def assemble_interface(grid: StackedGrid, spaces: SpaceSet,
                       params: MaterialParams) -> InterfaceSet:
    """Assemble the pressure-normal and tangential-slip interface forms."""
    imap = interface_map(grid)
    d = grid.spec.dimension
    bf_verts, bf_parents = grid.gamma_i_biot
    ff_verts, ff_parents = grid.gamma_i_fluid
    cells_b = bf_parents[imap.biot_facets]
    cells_f = ff_parents[imap.fluid_facets]

    U, P, V = spaces.U, spaces.P, spaces.V
    tU = U.cell_targets(cells_b)
    tP = P.cell_targets(cells_b)
    tV = V.cell_targets(cells_f)

    lat = list(range(d - 1))
    m_pu = elem_facet_mass(P, "facet_bottom", U, "facet_bottom")
    m_pv = elem_facet_mass(P, "facet_bottom", V, "facet_top")
    m_uu = elem_facet_mass(U, "facet_bottom", U, "facet_bottom")
    m_uv = elem_facet_mass(U, "facet_bottom", V, "facet_top")
    m_vv = elem_facet_mass(V, "facet_top", V, "facet_top")

    N_b = scatter(_vector_trace_blocks(m_pu, d, [d - 1], False, True),
                  tP, tU, 1, d, (P.n_dofs, U.n_dofs))
    N_f = scatter(_vector_trace_blocks(m_pv, d, [d - 1], False, True),
                  tP, tV, 1, d, (P.n_dofs, V.n_dofs))
    b = params.beta
    S_ww = scatter(b * _vector_trace_blocks(m_uu, d, lat, True, True),
                   tU, tU, d, d, (U.n_dofs, U.n_dofs))
    S_wv = scatter(b * _vector_trace_blocks(m_uv, d, lat, True, True),
                   tU, tV, d, d, (U.n_dofs, V.n_dofs))
    S_vv = scatter(b * _vector_trace_blocks(m_vv, d, lat, True, True),
                   tV, tV, d, d, (V.n_dofs, V.n_dofs))
    return InterfaceSet(N_b=N_b, N_f=N_f, S_ww=S_ww, S_wv=S_wv, S_vv=S_vv,
                        area=float(len(imap)) * _facet_area(U))


# ---------------------------------------------------------------------------
# weak generator action

def generator_action(forms: FormSet, iface: InterfaceSet, state: StateVector,
                     with_multiplier: bool = True) -> tuple[np.ndarray, ...]:
    """Weak action (L_u, L_w, L_p, L_v) of the dynamics operator.

    The semi-discrete dynamics read block-wise
        A_E du/dt = L_u,  rho_b M dw/dt = L_w,  c0 M dp/dt = L_p,
        rho_f M dv/dt = L_v,   with  B v = 0,
    and the alpha- and interface-pairings appear as exact (anti-)transposes,
    so that the X-pairing of (L_u..L_v) with the state itself collapses to
    minus the dissipation for every coefficient vector.
    """
    u, w, p, v = state.u, state.w, state.p, state.v
    L_u = forms.A_E @ w
    L_w = -(forms.A_E @ u) + forms.C_alpha.T @ p + iface.N_b.T @ p \
        + iface.S_wv @ v - iface.S_ww @ w
    L_p = -(forms.C_alpha @ w) - forms.K_p @ p + iface.N_f @ v - iface.N_b @ w
    L_v = -(forms.A_v @ v) - iface.N_f.T @ p - iface.S_vv @ v + iface.S_wv.T @ w
    if with_multiplier:
        L_v = L_v - forms.B.T @ state.pi
    return L_u, L_w, L_p, L_v


def dissipation(forms: FormSet, iface: InterfaceSet, state: StateVector) -> float:
    """k ||grad p||^2 + 2 nu ||D(v)||^2 + beta ||(v - w) . tau||^2 on Gamma_I."""
    w, p, v = state.w, state.p, state.v
    slip = w @ (iface.S_ww @ w) - 2.0 * (w @ (iface.S_wv @ v)) + v @ (iface.S_vv @ v)
    return float(p @ (forms.K_p @ p) + v @ (forms.A_v @ v) + slip)


def slip_seminorm_sq(iface: InterfaceSet, state: StateVector) -> float:
    """The beta-weighted tangential slip term of the dissipator alone."""
    w, v = state.w, state.v
    return float(w @ (iface.S_ww @ w) - 2.0 * (w @ (iface.S_wv @ v)) + v @ (iface.S_vv @ v))
