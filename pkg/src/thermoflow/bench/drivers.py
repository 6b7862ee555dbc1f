"""Benchmark drivers: manufactured solutions, heated cavity, Bingham channels."""
from __future__ import annotations

import time

import numpy as np

from ..fem.bc import error_norm
from ..fem.quadrature import gauss_line, quadrature_rule
from ..formulation import (BCSet, BinghamChannel, DirichletBC, FieldConfig, Forced, Grashof,
                           Rayleigh, StabilizationConfig, build_problem, divergence_check)
from ..mesh import barycentric_refine, generate_rect_mesh, uniform_refine
from ..rheology import (Affine, BinghamRegularized, Constant, Exponential, ImplicitBinghamEuler,
                        Newtonian, PowerLaw, Quadratic, SmoothedRamp, bingham_poiseuille,
                        magnitude)
from ..solver import (ALKrylov, ContinuationSchedule, KrylovConfig, MonolithicDirect,
                      NewtonConfig, SolveReport, continuation_run, newton_solve)
from .config import RunSpec
from .mms import PowerLawMMS
from .output import EocTable, FieldSet, RunResult

WALLS = ("left", "right", "top", "bottom")


# ----------------------------------------------------------------- helpers
def _newton_config(spec: RunSpec, line_search: bool = False) -> NewtonConfig:
    return NewtonConfig(spec.get("newton_atol", 1e-8), spec.get("newton_max_iter", 50),
                        bool(spec.extra.get("line_search", line_search)))


def _strategy(spec: RunSpec, default: str, gamma: float):
    kind = spec.get("solver", default)
    if kind == "direct":
        return MonolithicDirect()
    if kind == "al":
        return ALKrylov(spec.get("gamma", gamma), KrylovConfig(rtol=spec.get("krylov_rtol", 1e-10)))
    raise ValueError(f"unknown solver {kind!r}; expected 'direct' or 'al'")


def _hierarchy_mesh(base, nref, extent=(1.0, 1.0), origin=(0.0, 0.0), grading=0.0,
                    alfeld=False, centre_grading=0.0):
    mesh = generate_rect_mesh(base[0], base[1], extent, grading, origin, centre_grading)
    for _ in range(nref):
        mesh = uniform_refine(mesh)
    return barycentric_refine(mesh) if alfeld else mesh


def vertex_values(problem, z, name):
    """Values of a continuous field at the mesh vertices, shape ``(nv,)`` or ``(nv, ncomp)``."""
    V = problem.disc.spaces[name]
    C = V.components(z[problem.layout.slice(name)])[:, :problem.mesh.num_vertices]
    return C[0] if V.ncomp == 1 else C.T.copy()


def cell_values(problem, z):
    """Voigt stress, symmetric gradient and temperature at cell centroids."""
    S, D, th = problem.stress_field(z, np.array([[1 / 3, 1 / 3]]))
    return S[:, 0], D[:, 0], th[:, 0]


def boundary_flux(problem, z, marker: str) -> float:
    """``int u . n ds`` over the facets carrying ``marker`` (outward normal)."""
    mesh = problem.mesh
    V = problem.disc.spaces["u"]
    edges = mesh.facets_with(marker)
    cells = mesh.edge_cells[edges, 0]
    s, ws = gauss_line(2 * V.degree)
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    t = b - a
    L = np.hypot(t[:, 0], t[:, 1])
    x = a[:, None, :] + s[None, :, None] * t[:, None, :]
    n = np.column_stack([t[:, 1], -t[:, 0]]) / L[:, None]
    centre = mesh.vertices[mesh.cells[cells]].mean(axis=1)
    n[((0.5 * (a + b) - centre) * n).sum(1) < 0] *= -1
    xi = V.geometry.pull(cells, x)
    val, _ = V.evaluate(z[problem.layout.slice("u")], xi, cells)
    un = val[0] * n[:, None, 0] + val[1] * n[:, None, 1]
    return float((un * ws[None, :] * L[:, None]).sum())


# ------------------------------------------------------- convergence study
MMS_LOAD_DEGREE = 20


def _mms_problem(mesh, config, r, kappa_rate, spec, quad_degree):
    mms = PowerLawMMS(r=r, Ra=spec.get("Ra", 1e4), Pr=spec.get("Pr", 1.0), Di=spec.get("Di", 0.3),
                      Theta=spec.get("Theta", 0.0), kappa_rate=kappa_rate)
    bcs = BCSet([DirichletBC("u", WALLS, mms.velocity),
                 DirichletBC("theta", WALLS, mms.temperature)])
    form = Rayleigh(mms.Ra, mms.Pr, mms.Di, mms.Theta, Exponential(1.0, kappa_rate))
    model = PowerLaw(r, Exponential(1.0, mms.K_rate))
    if quad_degree is not None:
        config = FieldConfig(config.formulation, config.pair, config.k,
                             config.temperature_degree, config.stress_degree, quad_degree)
    # the forcing contains |D|^(r-2) and is integrated with a finer rule
    return mms, build_problem(mesh, form, model, config, bcs, forcing=mms.forcing,
                              heat_source=mms.heat_source,
                              load_degree=int(spec.extra.get("load_degree", MMS_LOAD_DEGREE)))


def mms_errors(problem, z, mms, r: float, degree: int | None = None) -> dict:
    """``L^r`` velocity, ``L^r'`` pressure and stress, ``L^2`` temperature errors."""
    rp = r / (r - 1)
    deg = degree or problem.quad_degree
    parts = problem.layout.split(z)
    sp = problem.disc.spaces
    out = {
        "u": error_norm(sp["u"], parts["u"], mms.velocity, r, degree=deg),
        "p": error_norm(sp["p"], parts["p"], mms.pressure, rp, degree=deg),
        "theta": error_norm(sp["theta"], parts["theta"], mms.temperature, 2, degree=deg),
    }
    rule = quadrature_rule(deg)
    geo = sp["u"].geometry
    x = geo.push(rule.xi)
    w = np.abs(geo.detJ)[:, None] * rule.weights[None, :]
    Sh, _, _ = problem.stress_field(z, rule.xi)
    Se = np.stack(mms.stress(x[..., 0], x[..., 1]), -1)
    out["S"] = float((w * magnitude(Sh - Se) ** rp).sum() ** (1 / rp))
    return out


def run_conv_study(spec: RunSpec) -> RunResult:
    """Manufactured-solution convergence study on uniformly refined unit squares.

    Each level is reached by a staged warm start: Newtonian fluid with unit
    conductivity, then the exponential conductivity, then the target exponent.
    """
    formulation = spec.get("formulation", "three")
    pair = spec.get("pair", "th")
    k = spec.get("k", 2)
    model = spec.get("model", "powerlaw")
    if model != "powerlaw":
        raise ValueError("the manufactured solution uses the power-law model")
    params = spec.get("model_params", [3.5 if formulation == "three" else 1.6])
    r = float(params[0])
    levels = spec.get("levels", 4)
    base = spec.get("base", (8, 8))
    config = FieldConfig(formulation, pair, k)
    newton = _newton_config(spec)
    table = EocTable(["u", "p", "theta", "S"])
    report = SolveReport(meta={"parameter": "level", "r": r, "formulation": formulation,
                               "pair": pair, "k": k})
    stages = [(2.0, 0.0), (2.0, 4.0), (r, 4.0)] if r != 2.0 else [(2.0, 0.0), (2.0, 4.0)]
    fields = []
    for level in range(levels):
        mesh = _hierarchy_mesh(base, level, alfeld=(pair == "sv"))
        z = None
        t0 = time.perf_counter()
        newton_total, ok, res = 0, True, None
        for rr, kr in stages:
            mms, problem = _mms_problem(mesh, config, rr, kr, spec, spec.quad_degree)
            z, res = newton_solve(problem, z, newton, MonolithicDirect())
            newton_total += res.iterations
            if not res.converged:
                ok = False
                break
        report.add(level, problem.size, res, time.perf_counter() - t0,
                   total_newton=newton_total)
        if not ok:
            break
        table.add(float(mesh.cell_diameters().max()), problem.size,
                  mms_errors(problem, z, mms, r))
        if level == levels - 1:
            fields.append(FieldSet("mms", mesh, {
                "velocity": vertex_values(problem, z, "u"),
                "temperature": vertex_values(problem, z, "theta")}))
    summary = {f"eoc_{f}": (None if len(table.rows) < 2 else float(table.eoc(f)[-1]))
               for f in table.fields}
    summary["converged"] = report.converged and len(table.rows) == levels
    return RunResult(spec.to_dict(), report, table, fields, summary)


# ---------------------------------------------------------------- cavity
CAVITY_PROBLEMS = ("P1", "P2", "P3")


def cavity_problem(mesh, name: str, value: float, spec: RunSpec, k: int = 2):
    """Differentially heated cavity: hot left wall, cold right wall, no-slip."""
    if name not in CAVITY_PROBLEMS:
        raise ValueError(f"unknown cavity problem {name!r}")
    kappa = Quadratic(1.0, 0.5, 0.5) if name == "P3" else Constant(1.0)
    mu = Constant(1.0) if name == "P1" else Exponential(1.0, -0.1)
    form_name = spec.get("form", "grashof")
    if form_name == "grashof":
        form = Grashof(value, spec.get("Pr", 1.0), spec.get("Di", 0.0), spec.get("Theta", 0.0),
                       kappa)
    elif form_name == "rayleigh":
        form = Rayleigh(value, spec.get("Pr", 1.0), spec.get("Di", 0.0), spec.get("Theta", 0.0),
                        kappa)
    else:
        raise ValueError("the cavity uses the Grashof or Rayleigh form")
    model_name = spec.get("model", "newtonian")
    if model_name == "newtonian":
        model = Newtonian(mu)
    elif model_name == "powerlaw":
        model = PowerLaw(float(spec.get("model_params", [1.6])[0]), Exponential(1.0, -0.1))
    else:
        raise ValueError("the cavity supports the newtonian and powerlaw models")
    bcs = BCSet([DirichletBC("u", WALLS, 0.0),
                 DirichletBC("theta", "left", 1.0), DirichletBC("theta", "right", 0.0)])
    config = FieldConfig(spec.get("formulation", "three"), spec.get("pair", "sv"), k,
                         quad_degree=spec.quad_degree)
    return build_problem(mesh, form, model, config, bcs, StabilizationConfig(True, True))


def run_cavity(spec: RunSpec) -> RunResult:
    """Continuation in Gr (or Ra) for the heated cavity with the AL solver."""
    name = spec.get("problem", "P1")
    k = spec.get("k", 2)
    pair = spec.get("pair", "sv")
    mesh = _hierarchy_mesh(spec.get("base", (8, 8)), spec.get("nref", 1),
                           grading=spec.get("grading", 1.0), alfeld=(pair == "sv"))
    form_name = spec.get("form", "grashof")
    default = [5e4, 1e6] if form_name == "grashof" else [1e3, 1e4]
    schedule = ContinuationSchedule("Gr" if form_name == "grashof" else "Ra",
                                    spec.get("schedule", default), "simple")
    strategy = _strategy(spec, "al", 1e4)

    def on_step(problem, z, res):
        return {"divergence": divergence_check(problem, z) if res.converged else None}

    states, report = continuation_run(lambda v: cavity_problem(mesh, name, v, spec, k), schedule,
                                      None, _newton_config(spec), strategy, on_step)
    report.meta.update(problem=name, Di=spec.get("Di", 0.0), k=k, gamma=getattr(strategy, "gamma", 0),
                       min_angle=mesh.min_angle())
    fields = []
    if states:
        problem = cavity_problem(mesh, name, schedule.values[len(states) - 1], spec, k)
        fields.append(FieldSet("cavity", mesh, {
            "velocity": vertex_values(problem, states[-1], "u"),
            "temperature": vertex_values(problem, states[-1], "theta")}))
    summary = {"converged": report.converged and len(states) == len(schedule.values),
               "max_avg_krylov": max((s.avg_krylov for s in report.steps), default=None),
               "max_divergence": max((s.extra.get("divergence") or 0.0 for s in report.steps),
                                     default=None)}
    return RunResult(spec.to_dict(), report, None, fields, summary)


# --------------------------------------------------------------- channels
def channel_mesh(base, nref, length, hot_end=10.0, alfeld=True):
    """Channel ``(0, length) x (-1, 1)`` with walls split into hot and cold parts."""
    mesh = _hierarchy_mesh(base, nref, (length, 2.0), (0.0, -1.0), alfeld=alfeld)

    def rule(xm, ym, old):
        out = np.array(old, dtype=object)
        wall = (old == "top") | (old == "bottom")
        out[wall & (xm <= hot_end)] = "hot"
        out[wall & (xm > hot_end)] = "cold"
        return out

    return mesh.relabel(rule)


def inlet_profile(Bn: float, mu: float, tau: float):
    def u(x, y):
        return [bingham_poiseuille(y, Bn, mu, tau), np.zeros_like(y)]
    return u


def channel_problem(mesh, name: str, eps: float, spec: RunSpec):
    theta_h = spec.get("theta_h", 10.0)
    Bn = spec.get("Bn", 1.5)
    if name == "Q1":
        mu, tau = Affine(-1.9, 20.0), Constant(1.0)
        Br = spec.get("Br", 0.1)
    elif name == "Q2":
        mu, tau = Constant(1.0), Affine(-1.0 / 3.0, 1.0 + theta_h / 3.0)
        Br = spec.get("Br", 0.0)
    else:
        raise ValueError(f"unknown channel problem {name!r}")
    form = BinghamChannel(spec.get("Re", 1.0), spec.get("Pe", 10.0), Bn, Br)
    formulation = spec.get("formulation", "four")
    model = BinghamRegularized(mu, tau, Bn, eps, multiplied=formulation == "four")
    bcs = BCSet([
        DirichletBC("u", ("hot", "cold"), 0.0),
        DirichletBC("u", "left", inlet_profile(Bn, float(mu(theta_h)), float(tau(theta_h)))),
        DirichletBC("u", "right", 0.0, comp=1),
        DirichletBC("theta", "cold", 0.0),
        DirichletBC("theta", ("left", "hot"), theta_h),
    ])
    config = FieldConfig(formulation, spec.get("pair", "sv"), spec.get("k", 2),
                         quad_degree=spec.quad_degree)
    return build_problem(mesh, form, model, config, bcs)


def plug_fraction(problem, z, x_range, half_width=0.15, threshold=0.05) -> float:
    """Share of near-centreline cells in ``x_range`` with ``|D(u)| < threshold``."""
    c = problem.mesh.vertices[problem.mesh.cells].mean(axis=1)
    sel = (np.abs(c[:, 1]) < half_width) & (c[:, 0] >= x_range[0]) & (c[:, 0] <= x_range[1])
    if not sel.any():
        return 0.0
    _, D, _ = cell_values(problem, z)
    return float(np.mean(magnitude(D[sel]) < threshold))


CHANNEL_WARMUP = (1e-1, 5e-2, 3e-2, 2e-2, 1e-2, 7e-3, 5e-3, 3e-3, 2e-3, 1.5e-3)


def run_channel(spec: RunSpec) -> RunResult:
    """Secant continuation in the regularisation parameter for a cooled Bingham channel.

    A Newtonian solve with the same viscosity law and a direct-solver ramp
    over larger ``eps`` (``CHANNEL_WARMUP``) provide the starting pair for the
    reported schedule.
    """
    name = spec.get("problem", "Q1")
    length = float(spec.extra.get("length", 40.0))
    mesh = channel_mesh(spec.get("base", (60, 4)), spec.get("nref", 0), length,
                        alfeld=spec.get("pair", "sv") == "sv")
    eps_values = list(spec.get("eps_schedule", [1e-3, 5e-4, 2e-4, 1e-4]))
    warmup = [e for e in spec.extra.get("warmup", CHANNEL_WARMUP) if e > eps_values[0]]
    strategy = _strategy(spec, "al", 1e5)
    newton = _newton_config(spec)
    make = lambda e: channel_problem(mesh, name, e, spec)  # noqa: E731

    base = make(eps_values[0])
    z0, res0 = newton_solve(base.with_(model=Newtonian(base.model.mu)), None, newton)
    history = []
    if res0.converged and warmup:
        states, pre = continuation_run(make, ContinuationSchedule("eps", warmup, "secant"), z0,
                                       newton, MonolithicDirect())
        history = list(zip(warmup, states))
        ok = len(states) == len(warmup)
    else:
        pre, ok = None, res0.converged
    if not ok:
        return RunResult(spec.to_dict(), pre, None, [], {"converged": False,
                                                         "failed_in": "warmup"})
    schedule = ContinuationSchedule("eps", eps_values, "secant")
    states, report = continuation_run(make, schedule, z0, newton, strategy,
                                      lambda p, z, r: {"divergence": divergence_check(p, z)},
                                      history=history)
    report.meta.update(problem=name, gamma=getattr(strategy, "gamma", 0),
                       warmup=[e for e, _ in history])
    fields, summary = [], {"converged": report.converged and len(states) == len(eps_values)}
    if states:
        problem = make(eps_values[len(states) - 1])
        z = states[-1]
        _, D, _ = cell_values(problem, z)
        fields.append(FieldSet("channel", mesh, {
            "velocity": vertex_values(problem, z, "u"),
            "temperature": vertex_values(problem, z, "theta")}, {"abs_D": magnitude(D)}))
        summary["plug_fraction_cold"] = plug_fraction(problem, z, (0.75 * length, length))
    summary["avg_krylov"] = [s.avg_krylov for s in report.steps]
    return RunResult(spec.to_dict(), report, None, fields, summary)


# ---------------------------------------------------------- Bingham-Euler
def euler_temperature(theta_h: float):
    def g(x, y):
        return theta_h * np.clip((20.0 - x) / 10.0, 0.0, 1.0)
    return g


EULER_MU, EULER_SIGMA, EULER_TAU = 0.5, 0.1, 0.025


def euler_model(eps: float, mu=EULER_MU, sigma=EULER_SIGMA, tau=EULER_TAU):
    """Bingham at the hot end, activated Euler at the cold end, Newtonian in between."""
    return ImplicitBinghamEuler(Constant(mu), SmoothedRamp(tau, 9.0, 7.0, eps),
                                SmoothedRamp(sigma, 1.0, 3.0, eps), eps)


def euler_problem(mesh, model, spec: RunSpec):
    theta_h = spec.get("theta_h", 10.0)
    bcs = BCSet([
        DirichletBC("u", ("top", "bottom"), 0.0),
        DirichletBC("u", "left", inlet_profile(1.0, EULER_MU, EULER_TAU)),
        DirichletBC("u", "right", 0.0, comp=1),
        DirichletBC("theta", WALLS, euler_temperature(theta_h)),
    ])
    config = FieldConfig("four", "p1p1", 1, quad_degree=spec.quad_degree)
    return build_problem(mesh, Forced(), model, config, bcs)


def effective_viscosity_field(problem, z) -> np.ndarray:
    S, D, th = cell_values(problem, z)
    return problem.model.effective_viscosity(S, D, th)


def run_bingham_euler(spec: RunSpec) -> RunResult:
    """Four-field P1-P1 run of the Bingham / activated-Euler channel."""
    # grading > 0 clusters rows towards the centreline, where the plug and the
    # Euler zone live; Newton tends to stall on such meshes
    mesh = _hierarchy_mesh(spec.get("base", (30, 12)), spec.get("nref", 0), (30.0, 2.0),
                           (0.0, -1.0), centre_grading=spec.get("grading", 0.0))
    eps_values = list(spec.get("eps_schedule", [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]))
    newton = _newton_config(spec)
    # Newtonian four-field state as the starting point of the continuation
    start = euler_problem(mesh, Newtonian(Constant(0.5)), spec)
    z0, res0 = newton_solve(start, None, newton, MonolithicDirect())
    schedule = ContinuationSchedule("eps", eps_values, "secant")
    states, report = continuation_run(lambda e: euler_problem(mesh, euler_model(e), spec),
                                      schedule, z0 if res0.converged else None, newton,
                                      _strategy(spec, "direct", 0.0))
    report.meta.update(start_converged=bool(res0.converged), start_newton=res0.iterations)
    fields, summary = [], {"converged": report.converged and len(states) == len(eps_values)}
    if states:
        problem = euler_problem(mesh, euler_model(eps_values[len(states) - 1]), spec)
        z = states[-1]
        mu_eff = effective_viscosity_field(problem, z)
        u = vertex_values(problem, z, "u")
        fields.append(FieldSet("bingham_euler", mesh, {
            "velocity": u, "speed": np.hypot(u[:, 0], u[:, 1]),
            "temperature": vertex_values(problem, z, "theta")}, {"mu_eff": mu_eff}))
        pos = mu_eff[mu_eff > 0]
        summary.update(
            mu_eff_min=float(pos.min()) if pos.size else None,
            mu_eff_max=float(mu_eff.max()),
            mu_eff_log10_range=float(np.log10(mu_eff.max() / pos.min())) if pos.size else None,
            inflow=-boundary_flux(problem, z, "left"),
            outflow=boundary_flux(problem, z, "right"))
    return RunResult(spec.to_dict(), report, None, fields, summary)


DRIVERS = {"conv-study": run_conv_study, "cavity": run_cavity, "channel": run_channel,
           "bingham-euler": run_bingham_euler}


def run(spec: RunSpec) -> RunResult:
    return DRIVERS[spec.command](spec)
