"""Energy functionals and numerical verification of the structural constants.

Covers the discrete energy identity and its per-step residual, dissipativity
and kernel triviality of the constrained generator, the discrete inf-sup
constant of the divergence pairing, and the constructive inf-sup boundary
value problem with its stability ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (
    FormSet,
    InterfaceSet,
    assemble_div_coupling,
    assemble_gradient_gram,
    assemble_mass,
    assemble_sym_gradient,
    dissipation,
    slip_seminorm_sq,
)
from .spaces import FieldSpace, SpaceSet, StateVector

#: Dense eigen/SVD oracles run below this many free dofs; larger systems use
#: iterative extremal eigensolvers with residual tolerance 1e-8.
DENSE_LIMIT = 2000


@dataclass
class EnergyReport:
    """Per-state energy diagnostics along a trajectory.

    e is the total energy, d_cum the cumulative dissipator (rectangle rule at
    the step endpoints, consistent with backward Euler), slip_norm the
    tangential interface term alone, content_norm the L^2 norm of the fluid
    content c0 p + alpha div u, and identity_residual the signed defect of
    the scheme's discrete energy identity (0.0 on the initial state).
    """

    time: float
    e: float
    d_cum: float
    identity_residual: float
    slip_norm: float
    content_norm: float


@dataclass
class StabilityReport:
    """Structural constants of the assembled operator."""

    infsup_constant: float | None = None
    z_ellipticity_constant: float | None = None
    max_symmetric_eigenvalue: float | None = None
    symmetric_eigenvalue_scale: float | None = None
    min_singular_value: float | None = None


def x_norm_sq(forms: FormSet, state: StateVector) -> float:
    y = state.concat()
    return float(max(y @ (forms.X_gram @ y), 0.0))


def total_energy(forms: FormSet, state: StateVector) -> float:
    return 0.5 * x_norm_sq(forms, state)


def _content_norm(forms: FormSet, state: StateVector) -> float:
    params = forms.params
    rhs = params.c0 * (forms.mass_p @ state.p) + forms.C_alpha @ state.u
    zeta = spla.spsolve(forms.mass_p.tocsc(), rhs)
    return float(np.sqrt(max(zeta @ (forms.mass_p @ zeta), 0.0)))


def energy_report(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                  state: StateVector) -> EnergyReport:
    """Energy diagnostics of a single state (no identity residual)."""
    return EnergyReport(
        time=state.time,
        e=total_energy(forms, state),
        d_cum=0.0,
        identity_residual=0.0,
        slip_norm=float(np.sqrt(max(slip_seminorm_sq(iface, state), 0.0))),
        content_norm=_content_norm(forms, state),
    )


def trajectory_energy(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                      trajectory) -> list[EnergyReport]:
    """Per-step energy rows with the scheme-consistent identity residual.

    Backward Euler satisfies e(n+1) + |dy|_X^2 / 2 + dt d(y(n+1)) = e(n)
    exactly (to solver precision); Crank-Nicolson satisfies
    e(n+1) + dt d(y_mid) = e(n).  The dissipator accumulates with the same
    quadrature the scheme dissipates with.
    """
    cfg = trajectory.cfg
    dt = cfg.dt
    rows: list[EnergyReport] = []
    d_cum = 0.0
    prev = None
    for state in trajectory.states:
        rep = energy_report(spaces, forms, iface, state)
        if prev is not None:
            if cfg.theta == 1.0:
                d_new = dissipation(forms, iface, state)
                delta = StateVector(
                    u=state.u - prev.u, w=state.w - prev.w, p=state.p - prev.p,
                    v=state.v - prev.v, pi=state.pi)
                resid = rep.e + 0.5 * x_norm_sq(forms, delta) + dt * d_new - prev_e
            else:
                mid = StateVector(
                    u=0.5 * (state.u + prev.u), w=0.5 * (state.w + prev.w),
                    p=0.5 * (state.p + prev.p), v=0.5 * (state.v + prev.v),
                    pi=state.pi)
                d_new = dissipation(forms, iface, mid)
                resid = rep.e + dt * d_new - prev_e
            d_cum += dt * d_new
            rep.d_cum = d_cum
            rep.identity_residual = resid
        prev, prev_e = state, rep.e
        rows.append(rep)
    return rows


# ---------------------------------------------------------------------------
# generator dissipativity and kernel

def _dense_generator_blocks(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet):
    """Dense weak generator L (state block) and divergence constraint B."""
    n_u, n_p, n_v = spaces.n_u, spaces.n_p, spaces.n_v
    Z_uu = sp.csr_matrix((n_u, n_u))
    Z_up = sp.csr_matrix((n_u, n_p))
    Z_uv = sp.csr_matrix((n_u, n_v))
    Z_pp = sp.csr_matrix((n_p, n_p))
    L = sp.bmat([
        [Z_uu, forms.A_E, Z_up, Z_uv],
        [-forms.A_E, -iface.S_ww, (forms.C_alpha + iface.N_b).T, iface.S_wv],
        [Z_up.T, -(forms.C_alpha + iface.N_b), -forms.K_p, iface.N_f],
        [Z_uv.T, iface.S_wv.T, -iface.N_f.T, -(forms.A_v + iface.S_vv)],
    ], format="csr")
    return L, forms.B


def generator_checks(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                     dense_limit: int = DENSE_LIMIT) -> StabilityReport:
    """Dissipativity and kernel triviality of the constrained generator.

    Reports the largest eigenvalue of the energy-symmetrized generator
    restricted to the discretely divergence-free manifold (must be <= 0 up
    to round-off, normalized by the extreme eigenvalue magnitude) and the
    smallest singular value of the full constrained operator including the
    multiplier coupling (must be > 0: trivial kernel).
    """
    if forms.params.c0 <= 0:
        raise ValueError("the energy-symmetrized eigencheck needs c0 > 0 "
                         "(the pressure block of the energy Gram degenerates)")
    n_state = spaces.n_state
    L, B = _dense_generator_blocks(spaces, forms, iface)
    M = forms.X_gram
    if n_state <= dense_limit:
        Ld = L.toarray()
        Sym = 0.5 * (Ld + Ld.T)
        Z = dla.null_space(B.toarray())
        P = dla.block_diag(np.eye(n_state - spaces.n_v), Z)
        Sr = P.T @ Sym @ P
        Mr = P.T @ M.toarray() @ P
        eigs = dla.eigh(Sr, Mr, eigvals_only=True)
        lam_max = float(eigs[-1])
        scale = float(max(1.0, np.abs(eigs).max()))
    else:
        lam_max, scale = _iterative_sym_max(L, B, M, spaces)

    # Full constrained operator: state rows plus multiplier column/row.
    n_pi = spaces.n_pi
    pi_col = sp.bmat([[sp.csr_matrix((n_state - spaces.n_v, n_pi))], [-forms.B.T]])
    bottom = sp.hstack([sp.csr_matrix((n_pi, n_state - spaces.n_v)), B])
    T = sp.bmat([[L, pi_col], [bottom, None]], format="csr")
    if T.shape[0] <= dense_limit + spaces.n_pi:
        smin = float(dla.svdvals(T.toarray())[-1])
    else:
        TtT = (T.T @ T).tocsc()
        val = spla.eigsh(TtT, k=1, sigma=0.0, which="LM", tol=1e-8,
                         return_eigenvectors=False)
        smin = float(np.sqrt(max(val[0], 0.0)))
    return StabilityReport(
        max_symmetric_eigenvalue=lam_max,
        symmetric_eigenvalue_scale=scale,
        min_singular_value=smin,
    )


def _iterative_sym_max(L, B, M, spaces: SpaceSet) -> tuple[float, float]:
    """LOBPCG extremal eigenvalue of the symmetrized generator on ker B."""
    n_state = spaces.n_state
    n_v = spaces.n_v
    Sym = (0.5 * (L + L.T)).tocsr()
    BBt = (B @ B.T).tocsc()
    lu = spla.splu(BBt)

    def project(y):
        out = y.copy()
        v = out[n_state - n_v:]
        out[n_state - n_v:] = v - B.T @ lu.solve(B @ v)
        return out

    def apply_sym(Y):
        out = np.empty_like(Y)
        for j in range(Y.shape[1]):
            out[:, j] = project(Sym @ project(Y[:, j]))
        return out

    A_op = spla.LinearOperator((n_state, n_state),
                               matvec=lambda y: project(Sym @ project(y)),
                               matmat=apply_sym)
    rng = np.random.default_rng(1234)
    X0 = np.column_stack([project(rng.standard_normal(n_state)) for _ in range(3)])
    vals_hi, _ = spla.lobpcg(A_op, X0, B=M, largest=True, tol=1e-8, maxiter=500)
    vals_lo, _ = spla.lobpcg(A_op, X0.copy(), B=M, largest=False, tol=1e-8, maxiter=500)
    lam_max = float(np.max(vals_hi))
    scale = float(max(1.0, np.abs(vals_lo).max(), np.abs(vals_hi).max()))
    return lam_max, scale


# ---------------------------------------------------------------------------
# inf-sup constants

def infsup_from_blocks(G: np.ndarray, B: np.ndarray, M: np.ndarray,
                       drop_tol: float = 1e-12) -> float:
    """Smallest nonzero generalized singular value of B G^{-1} B^T q = s^2 M q."""
    G = np.asarray(G)
    B = np.asarray(B)
    M = np.asarray(M)
    S = B @ dla.solve(G, B.T, assume_a="pos")
    eigs = dla.eigh(S, M, eigvals_only=True)
    cutoff = drop_tol * max(eigs.max(), 1.0)
    nonzero = eigs[eigs > cutoff]
    if nonzero.size == 0:
        return 0.0
    return float(np.sqrt(nonzero.min()))


def infsup_constant(spaces: SpaceSet, forms: FormSet) -> float:
    """Discrete inf-sup constant of b(zeta, pi) over the D(.)-norm."""
    return infsup_from_blocks(forms.D_v.toarray(), forms.B.toarray(),
                              forms.mass_pi.toarray())


def q1q1_infsup_constant(grid) -> float:
    """Negative control: the unstable equal-order Q1/Q1 pairing on the fluid box.

    Assembled outside the public space builder, which rejects this pairing.
    """
    d = grid.spec.dimension
    Vq1 = FieldSpace(grid.fluid, 1, d, dirichlet="bottom")
    PIq1 = FieldSpace(grid.fluid, 1, 1, dirichlet=None)
    G = assemble_sym_gradient(Vq1)
    B = -assemble_div_coupling(PIq1, Vq1)
    M = assemble_mass(PIq1)
    return infsup_from_blocks(G.toarray(), B.toarray(), M.toarray())


# ---------------------------------------------------------------------------
# constructive inf-sup boundary value problem

@dataclass
class ConstructiveInfsupResult:
    """Velocity field solving div omega = -eta with the cutoff boundary datum."""

    space: FieldSpace
    omega: np.ndarray
    ratio: float
    div_error: float
    compat: float


def default_cutoff(d: int):
    """Smooth positive-mean cutoff on the interface: products of sin(pi x)."""

    def mu(x):
        x = np.atleast_2d(x)
        out = np.sin(np.pi * x[:, 0])
        if d == 3:
            out = out * np.sin(np.pi * x[:, 1])
        return out

    return mu


def constructive_infsup_check(spaces: SpaceSet, forms: FormSet, eta,
                              mu_cutoff=None) -> ConstructiveInfsupResult:
    """Solve the inf-sup construction: div omega = -eta with interface datum.

    The boundary datum is zero on the bottom face and
    (-int eta / int_GI mu) mu(x) e_d on the interface, which balances the
    divergence constraint by construction.  omega minimizes the symmetric
    gradient energy subject to the discrete divergence constraint; the
    returned ratio |omega|_H1 / |eta|_L2 is the stability quotient.
    """
    from .resolvent import body_load, facet_load

    grid = spaces.grid
    d = grid.spec.dimension
    mu = mu_cutoff if mu_cutoff is not None else default_cutoff(d)

    PI = spaces.PI
    if callable(eta):
        eta_load = body_load(PI, eta)
        eta_c = spla.spsolve(forms.mass_pi.tocsc(), eta_load)
    else:
        eta_c = np.asarray(eta, dtype=float)
        eta_load = forms.mass_pi @ eta_c
    ones = np.ones(PI.n_dofs)
    int_eta = float(ones @ eta_load)
    eta_norm = float(np.sqrt(max(eta_c @ (forms.mass_pi @ eta_c), 0.0)))

    W = FieldSpace(grid.fluid, 2, d, dirichlet=None)
    _, parents = grid.gamma_i_fluid

    # boundary dof values: zero on the bottom, c_eta * mu * e_d on the
    # interface.  The scaling uses the integral of the interpolated cutoff so
    # that the discrete compatibility int(div omega) = -int(eta) is exact.
    idx = np.unravel_index(np.arange(W.n_nodes), W.node_sizes)
    leaders = ~W.is_follower
    on_top = (idx[d - 1] == W.node_sizes[-1] - 1) & leaders
    on_bot = (idx[d - 1] == 0) & leaders
    top_nodes = np.flatnonzero(on_top)
    mu_nodes = np.atleast_1d(np.asarray(mu(W.node_coords[top_nodes]), dtype=float))
    lift = np.zeros(W.n_dofs)
    lift[W.target[top_nodes] * d + (d - 1)] = mu_nodes
    ones_load = facet_load(W, "facet_top", parents,
                           lambda x: np.ones(len(np.atleast_2d(x))),
                           components=[d - 1])
    int_mu = float(ones_load @ lift)
    if abs(int_mu) < 1e-10:
        raise ValueError(f"cutoff has near-zero interface mean ({int_mu:.3e})")
    c_eta = -int_eta / int_mu
    omega = c_eta * lift
    bc_dofs = np.concatenate([
        (W.target[np.flatnonzero(on_top)][:, None] * d + np.arange(d)).ravel(),
        (W.target[np.flatnonzero(on_bot)][:, None] * d + np.arange(d)).ravel(),
    ])
    interior = np.setdiff1d(np.arange(W.n_dofs), bc_dofs)

    G = assemble_sym_gradient(W).tocsr()
    Bfull = -assemble_div_coupling(PI, W).tocsr()
    # constraint B omega = eta_load  (i.e. (div omega, q) = -(eta, q))
    rhs_c = eta_load - Bfull @ omega
    G_ii = G[interior][:, interior]
    G_ib = G[interior] @ omega
    B_i = Bfull[:, interior]
    m = forms.mass_pi @ ones  # mean functional pins the multiplier constant
    n_i, n_pi = interior.size, PI.n_dofs
    sys = sp.bmat([
        [G_ii, B_i.T, None],
        [B_i, None, m[:, None]],
        [None, sp.csr_matrix(m[None, :]), None],
    ], format="csc")
    rhs = np.concatenate([-G_ib, rhs_c, [0.0]])
    sol = spla.splu(sys).solve(rhs)
    omega[interior] = sol[:n_i]

    H1 = assemble_mass(W) + assemble_gradient_gram(W)
    ratio = float(np.sqrt(max(omega @ (H1 @ omega), 0.0))) / max(eta_norm, 1e-300)
    if eta_norm == 0.0:
        ratio = 0.0

    # L^2 error of (div omega + eta) by quadrature
    cpts, cw, _, grads = W.tables("cell")
    g = grads / W.spacings
    nodal = W.gather(omega)
    div_w = np.einsum("qia,cia->cq", g, nodal)
    eta_vals = PI.evaluate(eta_c, np.arange(grid.fluid.cells.shape[0]), cpts)[..., 0]
    vol = float(np.prod(W.spacings))
    div_err = float(np.sqrt(np.sum(cw * (div_w + eta_vals) ** 2) * vol))
    compat = abs(float(np.sum(cw * div_w) * vol) + int_eta)
    return ConstructiveInfsupResult(space=W, omega=omega, ratio=ratio,
                                    div_error=div_err, compat=compat)


# ---------------------------------------------------------------------------
# space-time weak-form residual

@dataclass
class SpaceTimeTest:
    """Separated test function: discrete spatial parts times a C^1 profile.

    sigma is a numpy Polynomial in t that must vanish at the final time
    (compact support in [0, T)); its derivative is taken analytically.
    """

    xi: np.ndarray
    q: np.ndarray
    zeta: np.ndarray
    sigma: np.polynomial.Polynomial


def weakform_residual(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                      trajectory, tests: list[SpaceTimeTest],
                      d0: np.ndarray | None = None,
                      source_loads=None) -> float:
    """Defect of the space-time weak identity for a discrete trajectory.

    Time integrals use the trapezoid rule on the step grid; the elastic
    velocity stored in each state stands in for u_t.  Returns the largest
    absolute defect over the supplied test functions; expected O(dt + h^2)
    for smooth data.
    """
    params = forms.params
    times = np.asarray(trajectory.times)
    T = times[-1]
    states = trajectory.states
    u0 = states[0]
    if d0 is None:
        d0_load = params.c0 * (forms.mass_p @ u0.p) + forms.C_alpha @ u0.u
    else:
        d0_load = forms.mass_p @ d0

    def trapz(vals):
        return float(np.trapezoid(vals, times))

    worst = 0.0
    for test in tests:
        if abs(test.sigma(T)) > 1e-12:
            raise ValueError("time profile must vanish at the final time")
        sig = test.sigma(times)
        dsig = test.sigma.deriv()(times)
        xi, q, zeta = test.xi, test.q, test.zeta

        a1 = np.array([params.rho_b * (xi @ (forms.mass_u @ s.w)) for s in states])
        a2 = np.array([xi @ (forms.A_E @ s.u - forms.C_alpha.T @ s.p) for s in states])
        a3 = np.array([q @ (params.c0 * (forms.mass_p @ s.p) + forms.C_alpha @ s.u)
                       for s in states])
        a4 = np.array([q @ (forms.K_p @ s.p) for s in states])
        a5 = np.array([params.rho_f * (zeta @ (forms.mass_f @ s.v)) for s in states])
        a6 = np.array([zeta @ (forms.A_v @ s.v) for s in states])
        a7 = np.array([zeta @ (iface.N_f.T @ s.p) - xi @ (iface.N_b.T @ s.p)
                       for s in states])
        a8 = np.array([q @ (iface.N_f @ s.v) for s in states])
        a9 = np.array([q @ (iface.N_b @ s.u) for s in states])
        a10 = np.array([zeta @ (iface.S_vv @ s.v) - xi @ (iface.S_wv @ s.v)
                        for s in states])
        a11 = np.array([zeta @ (iface.S_wv.T @ s.u) - xi @ (iface.S_ww @ s.u)
                        for s in states])

        lhs = (
            -trapz(a1 * dsig) + trapz(a2 * sig) - trapz(a3 * dsig)
            + trapz(a4 * sig) - trapz(a5 * dsig) + trapz(a6 * sig)
            + trapz(a7 * sig) - trapz(a8 * sig) - trapz(a9 * dsig)
            + trapz(a10 * sig) + trapz(a11 * dsig)
        )
        s0 = float(test.sigma(times[0]))
        rhs = s0 * (
            params.rho_b * (xi @ (forms.mass_u @ u0.w))
            + q @ d0_load
            + params.rho_f * (zeta @ (forms.mass_f @ u0.v))
            + q @ (iface.N_b @ u0.u)
            - (zeta @ (iface.S_wv.T @ u0.u) - xi @ (iface.S_ww @ u0.u))
        )
        if source_loads is not None:
            Fb, Ss, Ff = source_loads
            b1 = np.zeros_like(times) if Fb is None else np.array(
                [xi @ Fb(t) for t in times])
            b2 = np.zeros_like(times) if Ss is None else np.array(
                [q @ Ss(t) for t in times])
            b3 = np.zeros_like(times) if Ff is None else np.array(
                [zeta @ Ff(t) for t in times])
            rhs += trapz((b1 + b2 + b3) * sig)
        worst = max(worst, abs(lhs - rhs))
    return worst
