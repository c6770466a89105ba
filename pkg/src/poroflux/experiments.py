"""Configuration-driven desk-scale experiments.

Every experiment is a pure function of (config, seed): identical inputs give
byte-identical CSV output.  Independent sub-runs (mesh refinements, storage
coefficients) may execute on a thread pool capped by POROFLUX_THREADS;
results are collected by index, never by completion order.
"""

from __future__ import annotations

import configparser
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, mms
from .forms import MaterialParams, assemble_forms, assemble_interface
from .grid import GridSpec, build_grid
from .reporting import CsvTable, write_energy_svg, write_vtk
from .resolvent import ResolventData, assemble_resolvent, solve_resolvent, verify_strong
from .spaces import Q1, Q2, ElementFamily, StateVector, build_spaces
from .timestepper import (
    InitialData,
    TransientConfig,
    initialize_state,
    project_divergence_free,
    run_transient,
)

EXPERIMENT_NAMES = ("resolvent", "transient", "mms", "c0study", "infsup", "decay")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Everything one experiment run depends on."""

    experiment: str
    grid: GridSpec = field(default_factory=lambda: GridSpec(2, 8, 8, 8))
    params: MaterialParams = field(default_factory=MaterialParams)
    transient: TransientConfig = field(default_factory=TransientConfig)
    p_family: ElementFamily = Q1
    seed: int = 0
    eps: float = 1.0
    mms_name: str = "trig"
    refinements: tuple[int, ...] = ()
    write_fields: bool = False
    write_svg: bool = False
    out_dir: Path = Path("poroflux_out")


_SECTION_KEYS = {
    "grid": {"dimension", "n_lat", "n_b", "n_f"},
    "materials": {"rho_b", "rho_f", "lambda", "mu", "alpha", "c0", "k", "nu", "beta"},
    "time": {"dt", "t_end", "theta", "output_stride"},
    "experiment": {"p_family", "seed", "eps", "mms", "refinements",
                   "write_fields", "write_svg"},
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def parse_config(experiment: str, path=None, overrides=(), out_dir=None) -> RunConfig:
    """Build a RunConfig from an INI file plus 'section.key=value' overrides.

    Sections are [grid], [materials], [time], [experiment]; '#' starts a
    comment; unknown keys and missing required sections are rejected by name.
    """
    if experiment not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"choose from {EXPERIMENT_NAMES}")
    cp = configparser.ConfigParser(
        comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
        delimiters=("=",), interpolation=None,
    )
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        cp.read_string(text, source=str(path))
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}")
        target, value = ov.split("=", 1)
        section, key = target.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section.strip(), key.strip(), value.strip())

    for section in cp.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    needs_time = experiment in ("transient", "c0study", "decay")
    if path is not None:
        for required in ("grid", "materials") + (("time",) if needs_time else ()):
            if not cp.has_section(required):
                raise ConfigError(f"missing required section [{required}]")

    def geti(section, key, default):
        try:
            return cp.getint(section, key, fallback=default)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    def getf(section, key, default):
        try:
            return cp.getfloat(section, key, fallback=default)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    try:
        grid = GridSpec(
            dimension=geti("grid", "dimension", 2),
            n_lat=geti("grid", "n_lat", 8),
            n_b=geti("grid", "n_b", 8),
            n_f=geti("grid", "n_f", 8),
        )
        params = MaterialParams(
            rho_b=getf("materials", "rho_b", 1.0),
            rho_f=getf("materials", "rho_f", 1.0),
            lam=getf("materials", "lambda", 1.0),
            mu=getf("materials", "mu", 1.0),
            alpha=getf("materials", "alpha", 1.0),
            c0=getf("materials", "c0", 1.0),
            k=getf("materials", "k", 1.0),
            nu=getf("materials", "nu", 1.0),
            beta=getf("materials", "beta", 1.0),
        )
        transient = TransientConfig(
            dt=getf("time", "dt", 0.01),
            t_end=getf("time", "t_end", 0.5),
            theta=getf("time", "theta", 1.0),
            output_stride=geti("time", "output_stride", 1),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    fam = cp.get("experiment", "p_family", fallback="Q2" if experiment == "mms" else "Q1")
    if fam not in ("Q1", "Q2"):
        raise ConfigError(f"[experiment] p_family must be Q1 or Q2, got {fam!r}")
    refin = cp.get("experiment", "refinements", fallback="")
    try:
        refinements = tuple(int(tok) for tok in refin.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"[experiment] refinements: {exc}") from exc
    mms_name = cp.get("experiment", "mms", fallback="trig")
    if mms_name not in mms.REGISTRY:
        raise ConfigError(f"[experiment] mms must be one of {sorted(mms.REGISTRY)}")
    try:
        wf = _parse_bool(cp.get("experiment", "write_fields", fallback="false"))
        ws = _parse_bool(cp.get("experiment", "write_svg", fallback="false"))
    except ConfigError as exc:
        raise ConfigError(f"[experiment] write_fields/write_svg: {exc}") from exc

    eps = getf("experiment", "eps", 1.0)
    if not eps > 0:
        raise ConfigError(f"[experiment] eps must be > 0, got {eps}")

    return RunConfig(
        experiment=experiment, grid=grid, params=params, transient=transient,
        p_family=ElementFamily(fam), seed=geti("experiment", "seed", 0),
        eps=eps, mms_name=mms_name, refinements=refinements,
        write_fields=wf, write_svg=ws,
        out_dir=Path(out_dir) if out_dir is not None else Path("poroflux_out"),
    )


def n_workers() -> int:
    """Concurrency cap from POROFLUX_THREADS; absence means 1."""
    raw = os.environ.get("POROFLUX_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"POROFLUX_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"POROFLUX_THREADS must be a positive integer, got {raw!r}")
    return n


def _map_ordered(fn, items):
    """Map preserving input order, threaded when POROFLUX_THREADS > 1."""
    workers = n_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# building blocks

def _setup(cfg: RunConfig, n_lat=None, c0=None):
    gspec = cfg.grid if n_lat is None else replace(cfg.grid, n_lat=n_lat, n_b=n_lat, n_f=n_lat)
    params = cfg.params if c0 is None else replace(cfg.params, c0=c0)
    grid = build_grid(gspec)
    spaces = build_spaces(grid, cfg.p_family)
    forms = assemble_forms(grid, spaces, params)
    iface = assemble_interface(grid, spaces, params)
    return grid, spaces, forms, iface


def _random_state(spaces, forms, seed: int) -> StateVector:
    rng = np.random.default_rng(seed)
    v = project_divergence_free(
        spaces, forms, forms.mass_f @ rng.standard_normal(spaces.n_v))
    p = rng.standard_normal(spaces.n_p) if forms.params.c0 > 0 else np.zeros(spaces.n_p)
    return StateVector(
        u=rng.standard_normal(spaces.n_u), w=rng.standard_normal(spaces.n_u),
        p=p, v=v, pi=np.zeros(spaces.n_pi))


def _random_initial_data(spaces, forms, seed: int) -> InitialData:
    """Fixed random data with content compatible at c0 = 0."""
    import scipy.sparse.linalg as spla

    rng = np.random.default_rng(seed)
    u0 = rng.standard_normal(spaces.n_u)
    u1 = rng.standard_normal(spaces.n_u)
    v0 = rng.standard_normal(spaces.n_v)
    d0 = spla.spsolve(forms.mass_p.tocsc(), forms.C_alpha @ u0)
    return InitialData(u0=u0, u1=u1, d0=d0, v0=v0)


# ---------------------------------------------------------------------------
# experiments

def run_resolvent_study(cfg: RunConfig) -> CsvTable:
    """Round-trip check: F = (eps I - A) y* must reproduce y*."""
    from .forms import generator_action

    _, spaces, forms, iface = _setup(cfg)
    system = assemble_resolvent(spaces, forms, iface, cfg.eps)
    table = CsvTable("poroflux/resolvent/v1",
                     ["state", "rel_error_X", "algebraic_residual", "divergence_residual"])
    for i in range(10):
        star = _random_state(spaces, forms, cfg.seed + i)
        L_u, L_w, L_p, L_v = generator_action(forms, iface, star)
        eps = cfg.eps
        data = ResolventData(
            f1=eps * star.u - star.w,
            extra_u=eps * forms.params.rho_b * (forms.mass_u @ star.w) - L_w,
            extra_p=eps * forms.params.c0 * (forms.mass_p @ star.p) - L_p,
            extra_v=eps * forms.params.rho_f * (forms.mass_f @ star.v) - L_v,
        )
        sol, rep = solve_resolvent(system, data)
        diff = StateVector(u=sol.u - star.u, w=sol.w - star.w, p=sol.p - star.p,
                           v=sol.v - star.v, pi=sol.pi)
        rel = math.sqrt(analysis.x_norm_sq(forms, diff)
                        / max(analysis.x_norm_sq(forms, star), 1e-300))
        table.append([i, rel, rep.algebraic_residual, rep.divergence_residual])
    return table


MMS_HEADER = ["h", "err_u_L2", "err_p_L2", "err_v_L2", "order_u", "order_p", "order_v"]


def run_mms_study(cfg: RunConfig) -> CsvTable:
    """Manufactured-solution convergence of the eps-resolvent solve.

    Runs with the Q2 Biot pressure by default: with the Q1 pressure the
    alpha-coupling limits the displacement L2 rate to second order, while the
    Q2 choice shows the full third-order rates of the Q2 fields.
    """
    refinements = cfg.refinements or (8, 16, 32)
    if len(refinements) < 3:
        raise ConfigError("mms study needs at least 3 refinements")
    solution = mms.get_solution(cfg.mms_name, cfg.params, cfg.eps)

    def one(n_lat: int):
        _, spaces, forms, iface = _setup(cfg, n_lat=n_lat)
        system = assemble_resolvent(spaces, forms, iface, cfg.eps)
        state, _ = solve_resolvent(system, solution.resolvent_data())
        return mms.exact_errors(spaces, state, solution)

    errors = _map_ordered(one, list(refinements))
    table = CsvTable("poroflux/mms/v1", MMS_HEADER)
    for i, (n, err) in enumerate(zip(refinements, errors)):
        if i == 0:
            orders = [math.nan] * 3
        else:
            prev = errors[i - 1]
            orders = [math.log2(prev[k] / err[k]) if err[k] > 0 else math.nan
                      for k in ("u", "p", "v")]
        table.append([1.0 / n, err["u"], err["p"], err["v"], *orders])
    return table


def run_strong_residual_study(cfg: RunConfig) -> CsvTable:
    """Interface-condition residual decay of the manufactured resolvent solve."""
    refinements = cfg.refinements or (8, 16, 32)
    solution = mms.get_solution(cfg.mms_name, cfg.params, cfg.eps)

    def one(n_lat: int):
        _, spaces, forms, iface = _setup(cfg, n_lat=n_lat)
        system = assemble_resolvent(spaces, forms, iface, cfg.eps)
        data = solution.resolvent_data()
        state, _ = solve_resolvent(system, data)
        return verify_strong(system, state, data)

    reports = _map_ordered(one, list(refinements))
    table = CsvTable(
        "poroflux/strong/v1",
        ["h", "kinematic", "bjs", "pressure_balance", "stress_balance"])
    for n, rep in zip(refinements, reports):
        table.append([1.0 / n, rep.kinematic_residual, rep.bjs_residual,
                      rep.pressure_balance_residual, rep.stress_balance_residual])
    return table


def _transient_table(cfg: RunConfig, schema: str, columns, out_aux=None) -> CsvTable:
    _, spaces, forms, iface = _setup(cfg)
    init = initialize_state(spaces, forms,
                            _random_initial_data(spaces, forms, cfg.seed))
    traj = run_transient(spaces, forms, iface, init, cfg.transient)
    table = CsvTable(schema, columns)
    for rep in traj.energy:
        row = {"t": rep.time, "e": rep.e, "d_cum": rep.d_cum,
               "identity_residual": rep.identity_residual,
               "slip_norm": rep.slip_norm, "content_norm": rep.content_norm}
        table.append([row[c] for c in columns])
    if out_aux is not None:
        out_aux(spaces, traj)
    return table


def run_decay_study(cfg: RunConfig) -> CsvTable:
    """Source-free energy decay from seeded random initial data."""
    return _transient_table(cfg, "poroflux/decay/v1",
                            ["t", "e", "d_cum", "identity_residual"],
                            out_aux=_aux_writer(cfg))


def run_transient_study(cfg: RunConfig) -> CsvTable:
    """Free dynamics with per-step norms and diagnostics."""
    return _transient_table(
        cfg, "poroflux/transient/v1",
        ["t", "e", "d_cum", "identity_residual", "slip_norm", "content_norm"],
        out_aux=_aux_writer(cfg))


def _aux_writer(cfg: RunConfig):
    if not (cfg.write_fields or cfg.write_svg):
        return None

    def write(spaces, traj):
        if cfg.write_fields:
            stride = cfg.transient.output_stride
            for i, state in enumerate(traj.states):
                if i % stride == 0:
                    write_vtk(cfg.out_dir / f"fields_{i:04d}.vtk", spaces, state,
                              title=f"poroflux fields t={state.time:.6f}")
        if cfg.write_svg:
            write_energy_svg(cfg.out_dir / "energy.svg",
                             [r.time for r in traj.energy],
                             [r.e for r in traj.energy],
                             [r.d_cum for r in traj.energy])

    return write


C0_SEQUENCE = tuple(0.5**k for k in range(9)) + (0.0,)


def run_c0_study(cfg: RunConfig) -> CsvTable:
    """Degenerate-limit study: trajectories along c0 = 1, 1/2, ..., 2^-8, 0.

    Fixed data (u0, u1, d0 = alpha div u0, v0) for every member; reports the
    decay of sup_t |sqrt(c0) p| and the Cauchy differences of consecutive
    trajectories in the c0-independent part of the energy norm.
    """
    base_grid, base_spaces, base_forms, _ = _setup(cfg)
    data = _random_initial_data(base_spaces, base_forms, cfg.seed)

    def one(c0: float):
        _, spaces, forms, iface = _setup(cfg, c0=c0)
        init = initialize_state(spaces, forms, data)
        traj = run_transient(spaces, forms, iface, init, cfg.transient)
        sup_p = 0.0
        for st in traj.states:
            pn = math.sqrt(max(st.p @ (forms.mass_p @ st.p), 0.0))
            sup_p = max(sup_p, math.sqrt(c0) * pn)
        return traj, sup_p

    results = _map_ordered(one, list(C0_SEQUENCE))

    def seminorm_diff(t_a, t_b) -> float:
        # c0-independent part of the X norm: elastic + kinetic + fluid kinetic
        f = base_forms
        worst = 0.0
        for sa, sb in zip(t_a.states, t_b.states):
            du, dw, dv = sa.u - sb.u, sa.w - sb.w, sa.v - sb.v
            val = (du @ (f.A_E @ du) + f.params.rho_b * (dw @ (f.mass_u @ dw))
                   + f.params.rho_f * (dv @ (f.mass_f @ dv)))
            worst = max(worst, math.sqrt(max(val, 0.0)))
        return worst

    table = CsvTable("poroflux/c0study/v1", ["c0", "sup_sqrtc0_p", "diff_prev"])
    for i, (c0, (traj, sup_p)) in enumerate(zip(C0_SEQUENCE, results)):
        diff = math.nan if i == 0 else seminorm_diff(results[i - 1][0], traj)
        table.append([c0, sup_p, diff])
    return table


INFSUP_REFINEMENTS = (4, 8, 16)


def run_infsup_study(cfg: RunConfig) -> CsvTable:
    """Taylor-Hood inf-sup robustness plus the unstable Q1/Q1 control."""
    refinements = cfg.refinements or INFSUP_REFINEMENTS

    def one(n_lat: int):
        grid, spaces, forms, _ = _setup(cfg, n_lat=n_lat)
        return (analysis.infsup_constant(spaces, forms),
                analysis.q1q1_infsup_constant(grid))

    vals = _map_ordered(one, list(refinements))
    table = CsvTable("poroflux/infsup/v1", ["n_lat", "beta_h", "beta_h_q1q1"])
    for n, (th, q1) in zip(refinements, vals):
        table.append([n, th, q1])
    return table


EXPERIMENTS = {
    "resolvent": run_resolvent_study,
    "transient": run_transient_study,
    "mms": run_mms_study,
    "c0study": run_c0_study,
    "infsup": run_infsup_study,
    "decay": run_decay_study,
}


def run_experiment(cfg: RunConfig) -> Path:
    """Run one experiment and write run.csv (plus optional aux files)."""
    table = EXPERIMENTS[cfg.experiment](cfg)
    return table.write(cfg.out_dir / "run.csv")
