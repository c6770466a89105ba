"""Implicit time stepping of the coupled dynamics via resolvent solves.

One backward-Euler step solves (I/dt - A) y^{n+1} = y^n/dt + F^{n+1}, which
is exactly the resolvent system at eps = 1/dt; Crank-Nicolson rewrites
(I/dt - A/2) y^{n+1} = (I/dt + A/2) y^n + mean source as the resolvent at
eps = 2/dt with the explicit generator action folded into the datum.  Either
way one factorization serves the whole trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import FormSet, InterfaceSet, generator_action
from .resolvent import (
    ResolventData,
    ResolventSystem,
    assemble_resolvent,
    body_load,
    solve_resolvent,
)
from .spaces import SpaceSet, StateVector


@dataclass(frozen=True)
class TransientConfig:
    """Time grid and scheme: theta = 1 is backward Euler, 1/2 Crank-Nicolson."""

    dt: float = 0.01
    t_end: float = 0.5
    theta: float = 1.0
    output_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.t_end < self.dt:
            raise ValueError(f"t_end must be >= dt, got {self.t_end}")
        if self.theta not in (1.0, 0.5):
            raise ValueError(f"theta must be 1 (BE) or 0.5 (CN), got {self.theta}")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return math.ceil(self.t_end / self.dt - 1e-12)


@dataclass
class InitialData:
    """Initial fields: callables on coordinates or ready coefficient vectors.

    d0 is the initial fluid content c0 p(0) + alpha div u(0); passing its
    projected coefficient vector keeps the c0 = 0 compatibility check exact.
    """

    u0: object = None
    u1: object = None
    d0: object = None
    v0: object = None


@dataclass
class SourceSet:
    """Volume sources of the three equations, each a callable f(points, t)."""

    F_b: object = None
    S: object = None
    F_f: object = None

    def loads(self, spaces: SpaceSet, t: float):
        def _load(space, f):
            if f is None:
                return None
            return body_load(space, lambda x: f(x, t))

        return (_load(spaces.U, self.F_b), _load(spaces.P, self.S),
                _load(spaces.V, self.F_f))


@dataclass
class Trajectory:
    """All step states of one run; energy diagnostics attach per step."""

    cfg: TransientConfig
    times: list[float] = field(default_factory=list)
    states: list[StateVector] = field(default_factory=list)
    energy: list = field(default_factory=list)

    def append(self, state: StateVector):
        if self.times and state.time <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(state.time)
        self.states.append(state)


def _coerce(space, data, default_zero=True):
    if data is None:
        return np.zeros(space.n_dofs) if default_zero else None
    if callable(data):
        return space.interpolate(data)
    vec = np.asarray(data, dtype=float)
    if vec.shape != (space.n_dofs,):
        raise ValueError(f"expected {space.n_dofs} coefficients, got {vec.shape}")
    return vec


def project_divergence_free(spaces: SpaceSet, forms: FormSet, load: np.ndarray) -> np.ndarray:
    """L^2 projection of a load functional onto the discretely divergence-free fields."""
    M, B = forms.mass_f, forms.B
    sys = sp.bmat([[M, B.T], [B, None]], format="csc")
    rhs = np.concatenate([load, np.zeros(B.shape[0])])
    sol = spla.splu(sys).solve(rhs)
    return sol[: spaces.n_v]


def initialize_state(spaces: SpaceSet, forms: FormSet, data: InitialData) -> StateVector:
    """Build the discrete initial state from the prescribed fields.

    p(0) comes from the fluid content, (d0 - alpha div u0)/c0, projected onto
    the pressure space.  At c0 = 0 the content must already equal
    alpha div u0 (the pressure loses its initial datum and is gauged to
    zero); v0 is projected onto the divergence-free subspace and pi(0) = 0.
    """
    params = forms.params
    u = _coerce(spaces.U, data.u0)
    w = _coerce(spaces.U, data.u1)

    if data.d0 is None:
        d0_c = np.zeros(spaces.n_p)
    elif callable(data.d0):
        d0_c = spla.spsolve(forms.mass_p.tocsc(), body_load(spaces.P, data.d0))
    else:
        d0_c = np.asarray(data.d0, dtype=float)
    alpha_div = spla.spsolve(forms.mass_p.tocsc(), forms.C_alpha @ u)
    mismatch = d0_c - alpha_div
    mism_norm = float(np.sqrt(max(mismatch @ (forms.mass_p @ mismatch), 0.0)))
    if params.c0 > 0:
        p = mismatch / params.c0
    else:
        scale = 1.0 + float(np.sqrt(max(d0_c @ (forms.mass_p @ d0_c), 0.0)))
        if mism_norm > 1e-10 * scale:
            raise ValueError(
                f"c0 = 0 needs compatible data d0 = alpha div u0; "
                f"projected mismatch is {mism_norm:.3e}"
            )
        p = np.zeros(spaces.n_p)

    if data.v0 is None:
        v = np.zeros(spaces.n_v)
    else:
        if callable(data.v0):
            load = body_load(spaces.V, data.v0)
        else:
            load = forms.mass_f @ np.asarray(data.v0, dtype=float)
        v = project_divergence_free(spaces, forms, load)

    return StateVector(u=u, w=w, p=p, v=v, pi=np.zeros(spaces.n_pi)).validate(spaces)


class TransientStepper:
    """Holds the factorized step operator and advances states in time."""

    def __init__(self, spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                 cfg: TransientConfig, sources: SourceSet | None = None):
        self.spaces = spaces
        self.forms = forms
        self.iface = iface
        self.cfg = cfg
        self.sources = sources
        self.eps = 1.0 / (cfg.theta * cfg.dt)
        self.system: ResolventSystem = assemble_resolvent(spaces, forms, iface, self.eps)

    def _source_loads(self, t_new: float):
        if self.sources is None:
            return None, None, None
        if self.cfg.theta == 1.0:
            return self.sources.loads(self.spaces, t_new)
        a = self.sources.loads(self.spaces, t_new - self.cfg.dt)
        b = self.sources.loads(self.spaces, t_new)

        def _comb(x, y):
            if x is None and y is None:
                return None
            x = 0.0 if x is None else x
            y = 0.0 if y is None else y
            return x + y  # 2 * endpoint mean

        return tuple(_comb(x, y) for x, y in zip(a, b))

    def step(self, state: StateVector) -> StateVector:
        """One theta-step from the given state."""
        eps = self.eps
        t_new = state.time + self.cfg.dt
        src_u, src_p, src_v = self._source_loads(t_new)
        if self.cfg.theta == 1.0:
            data = ResolventData(
                f1=eps * state.u, f2=eps * state.w, f3=eps * state.p,
                f4=eps * state.v,
                extra_u=src_u, extra_p=src_p, extra_v=src_v,
            )
        else:
            L_u, L_w, L_p, L_v = generator_action(self.forms, self.iface, state)
            data = ResolventData(
                f1=eps * state.u + state.w, f2=eps * state.w,
                f3=eps * state.p, f4=eps * state.v,
                extra_u=L_w + (src_u if src_u is not None else 0.0),
                extra_p=L_p + (src_p if src_p is not None else 0.0),
                extra_v=L_v + (src_v if src_v is not None else 0.0),
            )
        new, _ = solve_resolvent(self.system, data)
        new.time = t_new
        return new


def run_transient(spaces: SpaceSet, forms: FormSet, iface: InterfaceSet,
                  init: StateVector, cfg: TransientConfig,
                  sources: SourceSet | None = None) -> Trajectory:
    """Evolve ceil(t_end/dt) steps and record every state with its energy row."""
    from .analysis import trajectory_energy

    stepper = TransientStepper(spaces, forms, iface, cfg, sources)
    traj = Trajectory(cfg=cfg)
    traj.append(init.validate(spaces))
    state = init
    for n in range(cfg.n_steps):
        try:
            state = stepper.step(state)
        except Exception as exc:
            raise RuntimeError(f"time step {n + 1} failed: {exc}") from exc
        traj.append(state)
    traj.energy = trajectory_energy(spaces, forms, iface, traj)
    return traj
