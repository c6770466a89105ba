"""Manufactured solutions for the 2D resolvent problem.

Fields are smooth, laterally periodic, satisfy the essential boundary
conditions (u and p vanish on the top face, v on the bottom face, v is
divergence-free), and are built to satisfy the interface stress balance
exactly: the tangential part ties the displacement coefficients to the fluid
ones, the normal part fixes the multiplier trace.  The three remaining
interface conditions (kinematic, tangential slip, pressure balance) have
their residuals exported as interface sources, so the extended weak form has
the chosen fields as exact solution.

The "harmonic" variant additionally makes the multiplier harmonic with a
matching bottom Neumann datum and zero pressure-balance residual, which is
what the harmonic-extension cross-check of the fluid pressure requires.

All forcing terms are hand-derived closed forms; no runtime computer
algebra.  Callables are vectorized over point arrays of shape (m, 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forms import MaterialParams
from .resolvent import ResolventData

TWO_PI = 2.0 * math.pi


@dataclass
class ManufacturedSolution:
    """Exact fields, body forcings and interface sources of one 2D construction."""

    name: str
    eps: float
    u: object
    p: object
    v: object
    pi: object
    f2: object
    s3: object
    f4: object
    g_n: object
    g_tau: object
    g_p: object
    harmonic_pi: bool = False

    def resolvent_data(self) -> ResolventData:
        g_p = None if self.harmonic_pi else self.g_p
        return ResolventData(f1=None, f2=self.f2, s3=self.s3, f4=self.f4,
                             g_n=self.g_n, g_tau=self.g_tau, g_p=g_p)


def _fluid_fields(a_v: float):
    """Stream-function fluid velocity, zero at the bottom, divergence-free."""

    def v(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        y1 = x[:, 1] + 1.0
        return np.stack([(a_v / math.pi) * c * y1, a_v * s * y1**2], axis=1)

    def lap_v(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        y1 = x[:, 1] + 1.0
        return np.stack(
            [-4.0 * math.pi * a_v * c * y1,
             a_v * s * (2.0 - 4.0 * math.pi**2 * y1**2)], axis=1)

    return v, lap_v


def _solid_fields(a_u: float, b_u: float):
    def u(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        y1 = 1.0 - x[:, 1]
        return np.stack([a_u * c * y1**2, b_u * s * y1**2], axis=1)

    def div_sigma_e(x, lam, mu):
        # div sigma^E = mu lap(u) + (lam + mu) grad(div u)
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        y1 = 1.0 - x[:, 1]
        lap = np.stack(
            [a_u * c * (2.0 - 4.0 * math.pi**2 * y1**2),
             b_u * s * (2.0 - 4.0 * math.pi**2 * y1**2)], axis=1)
        q = TWO_PI * a_u * y1**2 + 2.0 * b_u * y1       # div u = -s q(y)
        dq = -2.0 * TWO_PI * a_u * y1 - 2.0 * b_u
        grad_div = np.stack([-TWO_PI * c * q, -s * dq], axis=1)
        return mu * lap + (lam + mu) * grad_div

    return u, div_sigma_e


def _pressure_fields(a_p: float, b_p: float):
    def p(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        return (1.0 - x[:, 1]) * (a_p * s + b_p * c)

    def grad_p(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        return np.stack([TWO_PI * (1.0 - x[:, 1]) * (a_p * c - b_p * s),
                         -(a_p * s + b_p * c)], axis=1)

    def lap_p(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        return -(TWO_PI**2) * (1.0 - x[:, 1]) * (a_p * s + b_p * c)

    return p, grad_p, lap_p


def trig_solution(params: MaterialParams, eps: float = 1.0,
                  a_u: float = 0.31, a_p: float = 0.5, b_p: float = 0.2,
                  a_v: float = 0.27, d_pi: float = 0.15) -> ManufacturedSolution:
    """General trigonometric construction for the convergence study."""
    mu_, lam, nu, al = params.mu, params.lam, params.nu, params.alpha
    # tangential stress balance at the interface fixes b_u
    shear = nu * a_v * (1.0 / math.pi + TWO_PI)
    b_u = (shear / mu_ + 2.0 * a_u) / TWO_PI
    u, div_sigma_e = _solid_fields(a_u, b_u)
    p, grad_p, lap_p = _pressure_fields(a_p, b_p)
    v, lap_v = _fluid_fields(a_v)
    # normal stress balance fixes the multiplier trace at the interface
    pi_s = 4.0 * nu * a_v + 4.0 * mu_ * b_u + lam * (TWO_PI * a_u + 2.0 * b_u) + al * a_p
    pi_c = al * b_p

    def pi(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        return (pi_s * s + pi_c * c) * (1.0 + x[:, 1]) + d_pi * c * x[:, 1]

    def grad_pi(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        gx = TWO_PI * (pi_s * c - pi_c * s) * (1.0 + x[:, 1]) - TWO_PI * d_pi * s * x[:, 1]
        gy = (pi_s * s + pi_c * c) + d_pi * c
        return np.stack([gx, gy], axis=1)

    return _finalize("trig", params, eps, u, div_sigma_e, p, grad_p, lap_p,
                     v, lap_v, pi, grad_pi, a_u, b_u, a_p, b_p, a_v,
                     harmonic=False)


def harmonic_solution(params: MaterialParams, eps: float = 1.0,
                      a_p: float = 0.5, a_v: float = 0.27) -> ManufacturedSolution:
    """Construction with a harmonic multiplier and exact pressure balance.

    The multiplier solves the fluid-pressure subproblem of the solution
    exactly at the continuous level: Laplace's equation, Dirichlet data
    p + 2 nu dv_d/dx_d on the interface, Neumann data nu (lap v) . e_d on
    the bottom face.
    """
    mu_, lam, nu, al = params.mu, params.lam, params.nu, params.alpha
    v, lap_v = _fluid_fields(a_v)
    p, grad_p, lap_p = _pressure_fields(a_p, 0.0)
    # pi = sin(2 pi x) (A e^{2 pi y} + B e^{-2 pi y}); two trace conditions
    e2p = math.exp(TWO_PI)
    rhs_neumann = nu * a_v / math.pi          # A e^{-2pi} - B e^{2pi}
    trace_sum = a_p + 4.0 * nu * a_v          # A + B
    B = (trace_sum - e2p * rhs_neumann) / (1.0 + e2p**2)
    A = trace_sum - B
    # stress balance (tangential and normal) fixes the displacement amplitudes
    shear = nu * a_v * (1.0 / math.pi + TWO_PI)
    mat = np.array([[-2.0 * mu_, TWO_PI * mu_],
                    [-TWO_PI * lam, -(4.0 * mu_ + 2.0 * lam)]])
    a_u, b_u = np.linalg.solve(mat, np.array([shear, (al - 1.0) * a_p]))
    u, div_sigma_e = _solid_fields(a_u, b_u)

    def pi(x):
        x = np.atleast_2d(x)
        s = np.sin(TWO_PI * x[:, 0])
        return s * (A * np.exp(TWO_PI * x[:, 1]) + B * np.exp(-TWO_PI * x[:, 1]))

    def grad_pi(x):
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        ep, em = np.exp(TWO_PI * x[:, 1]), np.exp(-TWO_PI * x[:, 1])
        return np.stack([TWO_PI * c * (A * ep + B * em),
                         TWO_PI * s * (A * ep - B * em)], axis=1)

    return _finalize("harmonic", params, eps, u, div_sigma_e, p, grad_p, lap_p,
                     v, lap_v, pi, grad_pi, a_u, b_u, a_p, 0.0, a_v,
                     harmonic=True)


def _finalize(name, params, eps, u, div_sigma_e, p, grad_p, lap_p, v, lap_v,
              pi, grad_pi, a_u, b_u, a_p, b_p, a_v, harmonic):
    pr = params

    def f2(x):
        # eps^2 u + (-div sigma^E(u) + alpha grad p)/rho_b
        x = np.atleast_2d(x)
        return eps**2 * u(x) + (-div_sigma_e(x, pr.lam, pr.mu)
                                + pr.alpha * grad_p(x)) / pr.rho_b

    def s3(x):
        # eps c0 p + eps alpha div u - k lap p, with div u = -s q(y)
        x = np.atleast_2d(x)
        s = np.sin(TWO_PI * x[:, 0])
        y1 = 1.0 - x[:, 1]
        div_u = -s * (TWO_PI * a_u * y1**2 + 2.0 * b_u * y1)
        return eps * pr.c0 * p(x) + eps * pr.alpha * div_u - pr.k * lap_p(x)

    def f4(x):
        x = np.atleast_2d(x)
        return eps * v(x) + (-pr.nu * lap_v(x) + grad_pi(x)) / pr.rho_f

    def g_n(x):
        # (v - eps u) . e_d + k dp/dx_d at the interface
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        return (a_v - eps * b_u) * s - pr.k * (a_p * s + b_p * c)

    def g_tau(x):
        # beta (v - eps u) . tau + tau . sigma_f e_d at the interface
        x = np.atleast_2d(x)
        s, c = np.sin(TWO_PI * x[:, 0]), np.cos(TWO_PI * x[:, 0])
        shear_f = pr.nu * a_v * (1.0 / math.pi + TWO_PI)
        return pr.beta * ((a_v / math.pi) * c - eps * a_u * c) + shear_f * c

    def g_p(x):
        # p + e_d . sigma_f e_d = p + 2 nu dv_d/dx_d - pi at the interface
        x = np.atleast_2d(x)
        x0 = np.column_stack([x[:, 0], np.zeros(len(x))])
        return p(x0) + 4.0 * pr.nu * a_v * np.sin(TWO_PI * x[:, 0]) - pi(x0)

    return ManufacturedSolution(
        name=name, eps=eps, u=u, p=p, v=v, pi=pi, f2=f2, s3=s3, f4=f4,
        g_n=g_n, g_tau=g_tau, g_p=g_p, harmonic_pi=harmonic,
    )


REGISTRY = {"trig": trig_solution, "harmonic": harmonic_solution}


def get_solution(name: str, params: MaterialParams, eps: float = 1.0) -> ManufacturedSolution:
    if name not in REGISTRY:
        raise KeyError(f"unknown manufactured solution {name!r}; "
                       f"registered: {sorted(REGISTRY)}")
    return REGISTRY[name](params, eps)


def exact_errors(spaces, state, ms: ManufacturedSolution) -> dict[str, float]:
    """L^2 errors of the discrete fields against the manufactured ones."""
    from .resolvent import cell_points

    out = {}
    for key, space, coeffs, exact in (
        ("u", spaces.U, state.u, ms.u),
        ("p", spaces.P, state.p, ms.p),
        ("v", spaces.V, state.v, ms.v),
        ("pi", spaces.PI, state.pi, ms.pi),
    ):
        pts, wq, _, _ = space.tables("cell")
        cells = np.arange(space.mesh.cells.shape[0])
        approx = space.evaluate(coeffs, cells, pts)
        x = cell_points(space, pts).reshape(-1, 2)
        vals = np.asarray(exact(x), dtype=float)
        exact_vals = vals.reshape(approx.shape[0], approx.shape[1], -1)
        vol = float(np.prod(space.spacings))
        err2 = np.sum(wq[None, :, None] * (approx - exact_vals) ** 2) * vol
        out[key] = float(np.sqrt(max(err2, 0.0)))
    return out
