"""Nonlinear residuals and Newton Jacobians of the coupled flow/heat system.

The unknowns are ordered ``(S, theta, u, p)`` for the four-field formulation
and ``(theta, u, p)`` for the three-field one.  Residuals are written
pointwise in terms of field values and gradients at quadrature points; the
Jacobian follows by forward-mode differentiation of the same expressions
(:class:`Jet`), with constitutive derivatives supplied analytically by the
rheology models.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fem.assembly import cell_context, facet_context, mass_matrix, cellwise_inverse
from .fem.bc import eliminate
from .fem.element import CG, DG
from .fem.quadrature import quadrature_rule
from .fem.space import FieldLayout, FunctionSpace
from .mesh import Mesh
from .rheology import (Constant, Newtonian, RheologyModel, ScalarLaw, Quadratic, Affine,
                       as_law)


# ------------------------------------------------------------------- forms
@dataclass(frozen=True)
class Coefficients:
    visc: float
    conv: float
    buoy: float
    cond: float
    adi: float
    diss: float
    Theta: float
    kappa: ScalarLaw


@dataclass(frozen=True)
class Rayleigh:
    """``-Pr div S + div(u u) + grad p = Ra Pr theta e_d`` and matching energy."""

    Ra: float
    Pr: float = 1.0
    Di: float = 0.0
    Theta: float = 0.0
    kappa: ScalarLaw = Constant(1.0)
    name = "rayleigh"

    def coefficients(self):
        return Coefficients(self.Pr, 1.0, self.Ra * self.Pr, 1.0, self.Di,
                            self.Di / self.Ra, self.Theta, self.kappa)

    @property
    def nu_ref(self):
        return self.Pr


@dataclass(frozen=True)
class Grashof:
    """``-Gr^-1/2 div S + div(u u) + grad p = theta e_d`` and matching energy."""

    Gr: float
    Pr: float = 1.0
    Di: float = 0.0
    Theta: float = 0.0
    kappa: ScalarLaw = Constant(1.0)
    name = "grashof"

    def coefficients(self):
        s = np.sqrt(self.Gr)
        return Coefficients(1 / s, 1.0, 1.0, 1 / (self.Pr * s), self.Di, self.Di / s,
                            self.Theta, self.kappa)

    @property
    def nu_ref(self):
        return 1 / np.sqrt(self.Gr)


@dataclass(frozen=True)
class BinghamChannel:
    """Channel scaling with Reynolds, Peclet, Bingham and Brinkman numbers."""

    Re: float = 1.0
    Pe: float = 10.0
    Bn: float = 1.5
    Br: float = 0.0
    name = "bingham"

    def coefficients(self):
        return Coefficients(1.0, self.Re, 0.0, 1 / self.Pe, 0.0, self.Br / self.Pe, 0.0,
                            Constant(1.0))

    @property
    def nu_ref(self):
        return 1.0


@dataclass(frozen=True)
class Forced:
    """Unit-coefficient system with body force and conductivity law."""

    kappa: ScalarLaw = Constant(1.0)
    name = "forced"

    def coefficients(self):
        return Coefficients(1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, self.kappa)

    @property
    def nu_ref(self):
        return 1.0


FORMS = {"rayleigh": Rayleigh, "grashof": Grashof, "bingham": BinghamChannel, "forced": Forced}


def _check_form(form):
    vals = {k: getattr(form, k) for k in ("Ra", "Pr", "Gr", "Re", "Pe") if hasattr(form, k)}
    if any(not v > 0 for v in vals.values()):
        raise ValueError(f"dimensionless numbers must be positive: {vals}")
    for k in ("Di", "Theta", "Bn", "Br"):
        if hasattr(form, k) and getattr(form, k) < 0:
            raise ValueError(f"{k} must be non-negative")


# ----------------------------------------------------------- configuration
@dataclass(frozen=True)
class FieldConfig:
    """Discretisation choice.

    ``pair`` is ``"th"`` (Taylor-Hood), ``"sv"`` (Scott-Vogelius, needs an
    Alfeld-refined mesh) or ``"p1p1"`` (equal order with pressure
    stabilisation).  ``formulation`` is ``"three"`` or ``"four"``.
    """

    formulation: str = "three"
    pair: str = "sv"
    k: int = 2
    temperature_degree: int | None = None
    stress_degree: int | None = None
    quad_degree: int | None = None

    def __post_init__(self):
        if self.formulation not in ("three", "four"):
            raise ValueError("formulation must be 'three' or 'four'")
        if self.pair not in ("th", "sv", "p1p1"):
            raise ValueError("pair must be 'th', 'sv' or 'p1p1'")
        if self.pair == "sv" and self.k < 2:
            raise ValueError("Scott-Vogelius needs k >= 2")
        if self.pair == "th" and self.k < 2:
            raise ValueError("Taylor-Hood needs k >= 2")

    @property
    def velocity_degree(self):
        return 1 if self.pair == "p1p1" else self.k

    @property
    def theta_degree(self):
        if self.temperature_degree is not None:
            return self.temperature_degree
        return self.velocity_degree

    @property
    def sigma_degree(self):
        if self.stress_degree is not None:
            return self.stress_degree
        return 0 if self.pair == "p1p1" else self.velocity_degree - 1

    @property
    def stress_shape(self):
        return "traceless" if self.pair == "sv" else "symmetric"


@dataclass(frozen=True)
class StabilizationConfig:
    """Interior-penalty jump terms and equal-order pressure stabilisation."""

    velocity_ip: bool = False
    temperature_ip: bool = False
    ip_coeff: float = 5e-3
    pressure_p1p1: bool | None = None
    p1p1_coeff: float = 2.0

    def __post_init__(self):
        if self.ip_coeff < 0 or self.p1p1_coeff < 0:
            raise ValueError("stabilisation coefficients must be non-negative")


@dataclass(frozen=True)
class DirichletBC:
    """Dirichlet data on ``markers`` for ``field`` (optionally one component)."""

    field: str
    markers: tuple[str, ...] | str
    value: Callable | float | Sequence = 0.0
    comp: int | None = None


class BCSet(list):
    """Ordered Dirichlet conditions; later entries win on shared nodes.

    Boundaries without an entry carry the natural condition (insulated for
    temperature, zero traction for velocity).
    """

    def for_field(self, name):
        return [bc for bc in self if bc.field == name]


@dataclass(frozen=True)
class BlockSystem:
    """Monolithic matrix with its field layout (pressure last)."""

    matrix: sp.csr_matrix
    layout: FieldLayout

    @property
    def npz(self):
        return self.layout.offsets[self.layout.pressure]

    @property
    def A(self):
        return self.matrix[:self.npz, :self.npz]

    @property
    def Bt(self):
        return self.matrix[:self.npz, self.npz:]

    @property
    def B(self):
        return self.matrix[self.npz:, :self.npz]

    @property
    def C(self):
        return self.matrix[self.npz:, self.npz:]


# --------------------------------------------------------------------- jets
class Jet:
    """Value ``v`` (M, nq) with sparse derivatives ``d[slot]`` (M, nq)."""

    __slots__ = ("v", "d")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, v, d=None):
        self.v = v
        self.d = d

    @staticmethod
    def _split(x):
        if isinstance(x, Jet):
            return x.v, x.d
        return x, None

    @staticmethod
    def _merge(a, b, ca=1.0, cb=1.0):
        if a is None and b is None:
            return None
        out = {}
        for k, v in (a or {}).items():
            out[k] = ca * v
        for k, v in (b or {}).items():
            out[k] = out[k] + cb * v if k in out else cb * v
        return out

    def __add__(self, o):
        ov, od = self._split(o)
        return Jet(self.v + ov, self._merge(self.d, od))

    __radd__ = __add__

    def __sub__(self, o):
        ov, od = self._split(o)
        return Jet(self.v - ov, self._merge(self.d, od, 1.0, -1.0))

    def __rsub__(self, o):
        ov, od = self._split(o)
        return Jet(ov - self.v, self._merge(od, self.d, 1.0, -1.0))

    def __neg__(self):
        return Jet(-self.v, None if self.d is None else {k: -v for k, v in self.d.items()})

    def __mul__(self, o):
        ov, od = self._split(o)
        return Jet(self.v * ov, self._merge(self.d, od, ov, self.v))

    __rmul__ = __mul__

    def __truediv__(self, o):
        ov, od = self._split(o)
        return Jet(self.v / ov, self._merge(self.d, od, 1 / ov, -self.v / ov ** 2))

    def law(self, law: ScalarLaw) -> "Jet":
        return Jet(law(self.v), None if self.d is None else
                   {k: law.deriv(self.v) * v for k, v in self.d.items()})


def _lincomb(coeffs, jets):
    """Derivative dict of ``sum_j coeffs[j] * jets[j]`` (coeff arrays (M, nq))."""
    out = None
    for c, j in zip(coeffs, jets):
        if isinstance(j, Jet) and j.d is not None:
            out = Jet._merge(out, j.d, 1.0, c)
    return out


def _tensor_jets(val, derivs):
    """Jets of a Voigt tensor from its value and ``[(dX_dY (...,3,3|3), jets_Y)]``."""
    out = []
    for i in range(3):
        d = None
        for dmat, ys in derivs:
            if isinstance(ys, Jet):
                coeffs, js = [dmat[..., i]], [ys]
            else:
                coeffs, js = [dmat[..., i, j] for j in range(3)], ys
            d = Jet._merge(d, _lincomb(coeffs, js))
        out.append(Jet(val[..., i], d))
    return out


def _stack(jets):
    return np.stack([j.v if isinstance(j, Jet) else j for j in jets], axis=-1)


def _dot(a, b):
    return (a[0] * b[0] + a[1] * b[1] + 2.0 * (a[2] * b[2]))


# ------------------------------------------------------------ discretisation
class Discretization:
    """Spaces, layout and cached tabulations for one mesh and field config."""

    def __init__(self, mesh: Mesh, config: FieldConfig):
        if config.pair == "sv" and not mesh.alfeld:
            raise ValueError("Scott-Vogelius pair requires a barycentrically refined mesh")
        self.mesh = mesh
        self.config = config
        kv = config.velocity_degree
        V = FunctionSpace(mesh, CG(kv, "vector"))
        Q = FunctionSpace(mesh, DG(kv - 1) if config.pair == "sv" else CG(1 if kv == 1 else kv - 1))
        T = FunctionSpace(mesh, CG(config.theta_degree))
        fields = [("theta", T), ("u", V), ("p", Q)]
        if config.formulation == "four":
            fam = DG(config.sigma_degree, config.stress_shape)
            fields.insert(0, ("S", FunctionSpace(mesh, fam)))
        self.layout = FieldLayout(fields, pressure="p")
        self.spaces = dict(fields)
        self._tabs = {}
        self._facet = None
        self._Mp = None

    @property
    def names(self):
        return self.layout.names

    def slot_offsets(self):
        off, out = 0, {}
        for n in self.names:
            out[n] = off
            off += 3 * self.spaces[n].ncomp
        return out, off

    def cell_data(self, degree):
        """Quadrature points, weights and slot tabulations ``B[m, q, s, i]``."""
        if degree not in self._tabs:
            first = self.spaces[self.names[0]]
            ctx = cell_context(first, None, degree)
            B = {}
            for n in self.names:
                V = self.spaces[n]
                t = ctx.test if V is first else cell_context(V, None, degree).test
                nc = V.ncomp
                M, nq = ctx.w.shape
                arr = np.empty((M, nq, 3 * nc, t.phi.shape[-1]))
                for c in range(nc):
                    arr[:, :, 3 * c] = t.phi[c][None]
                    arr[:, :, 3 * c + 1] = t.dphi[c][..., 0]
                    arr[:, :, 3 * c + 2] = t.dphi[c][..., 1]
                B[n] = arr
            self._tabs[degree] = (ctx.x, ctx.w, ctx.h, B)
        return self._tabs[degree]

    def facet_data(self):
        if self._facet is None:
            k = self.config.velocity_degree
            self._facet = {n: facet_context(self.spaces[n], None, 2 * k)
                           for n in ("u", "theta")}
        return self._facet

    def pressure_mass(self):
        if self._Mp is None:
            Q = self.spaces["p"]
            M = mass_matrix(Q)
            Minv = cellwise_inverse(M, Q) if not Q.continuous else None
            self._Mp = (M, Minv)
        return self._Mp


# ------------------------------------------------------------------ problem
@dataclass
class Problem:
    """Complete nonlinear problem: discretisation, physics and boundary data."""

    disc: Discretization
    form: object
    model: RheologyModel
    bcs: BCSet
    stab: StabilizationConfig = field(default_factory=StabilizationConfig)
    forcing: Callable | None = None  # (x, y) -> (f1, f2)
    heat_source: Callable | None = None  # (x, y) -> g
    load_degree: int | None = None  # separate quadrature for forcing terms
    _bc_cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        _check_form(self.form)
        if self.config.formulation == "three" and not self.model.explicit:
            raise ValueError(f"{self.model.name} needs the four-field formulation")
        if not self.bcs.for_field("theta"):
            raise ValueError("at least one temperature Dirichlet condition is required")
        for bc in self.bcs:
            if bc.field not in self.layout:
                raise ValueError(f"unknown field {bc.field!r} in boundary conditions")

    # ---------------------------------------------------------------- views
    @property
    def config(self) -> FieldConfig:
        return self.disc.config

    @property
    def layout(self) -> FieldLayout:
        return self.disc.layout

    @property
    def mesh(self) -> Mesh:
        return self.disc.mesh

    @property
    def size(self) -> int:
        return self.layout.size

    def with_(self, **changes) -> "Problem":
        changes.setdefault("_bc_cache", None if "bcs" in changes else self._bc_cache)
        if {"forcing", "heat_source", "load_degree"} & set(changes):
            changes["_forcing_cache"] = {}
        return replace(self, **changes)

    @property
    def p1p1(self) -> bool:
        flag = self.stab.pressure_p1p1
        return self.config.pair == "p1p1" if flag is None else bool(flag)

    @property
    def quad_degree(self) -> int:
        if self.config.quad_degree is not None:
            return self.config.quad_degree
        k = self.config.velocity_degree
        kap = self.form.coefficients().kappa
        polynomial = (isinstance(self.model, Newtonian) and isinstance(self.model.mu, Constant)
                      and isinstance(kap, (Constant, Affine, Quadratic)))
        return min(2 * k + 2 if polynomial else 2 * k + 6, 20)

    @property
    def pressure_nullspace(self) -> bool:
        """True when every boundary facet carries full velocity Dirichlet data."""
        covered = set()
        for bc in self.bcs.for_field("u"):
            if bc.comp is None:
                covered |= {bc.markers} if isinstance(bc.markers, str) else set(bc.markers)
        return self.mesh.markers <= covered and not self.p1p1_breaks_nullspace

    @property
    def p1p1_breaks_nullspace(self) -> bool:
        return False

    @property
    def nu_ref(self) -> float:
        return float(self.form.nu_ref)

    # ------------------------------------------------------------ Dirichlet
    def dirichlet(self):
        """Global dofs and values of all Dirichlet conditions."""
        if self._bc_cache is None:
            vals = {}
            for bc in self.bcs:
                V = self.disc.spaces[bc.field]
                off = self.layout.offsets[bc.field]
                comps = range(V.ncomp) if bc.comp is None else [bc.comp]
                nodes = V.boundary_nodes(bc.markers)
                x, y = V.node_coords[nodes].T
                if callable(bc.value):
                    g = bc.value(x, y)
                else:
                    g = bc.value
                for c in comps:
                    if V.ncomp > 1 and bc.comp is None:
                        gc = g[c] if not np.isscalar(g) else g
                    else:
                        gc = g
                    gc = np.broadcast_to(np.asarray(gc, dtype=float), x.shape)
                    for d, v in zip(off + c * V.nnode + nodes, gc):
                        vals[int(d)] = float(v)
            dofs = np.array(sorted(vals), dtype=np.int64)
            self._bc_cache = (dofs, np.array([vals[d] for d in dofs]))
        return self._bc_cache

    def lift(self, z: np.ndarray | None = None) -> np.ndarray:
        """Copy of ``z`` (zeros by default) with Dirichlet values imposed."""
        z = np.zeros(self.size) if z is None else np.array(z, dtype=float)
        dofs, vals = self.dirichlet()
        z[dofs] = vals
        return z

    # ---------------------------------------------------------- assembly
    def residual(self, z: np.ndarray) -> np.ndarray:
        return self._assemble(z, jacobian=False)[0]

    def jacobian(self, z: np.ndarray) -> BlockSystem:
        return BlockSystem(self._assemble(z, jacobian=True)[1], self.layout)

    def assemble(self, z: np.ndarray):
        """Residual vector and Jacobian :class:`BlockSystem` at ``z``."""
        F, J = self._assemble(z, jacobian=True)
        return F, BlockSystem(J, self.layout)

    def _field_jets(self, z, B, jac):
        """Jets of every slot (value, d/dx, d/dy per component) of every field."""
        offs, _ = self.disc.slot_offsets()
        jets = {}
        for n in self.disc.names:
            V = self.disc.spaces[n]
            U = z[self.layout.slice(n)][V.cell_dofs]
            vals = np.einsum("mqsi,mi->mqs", B[n], U)
            one = np.ones(vals.shape[:2])
            jets[n] = [Jet(vals[..., s], {offs[n] + s: one} if jac else None)
                       for s in range(vals.shape[-1])]
        return jets

    def _stress_voigt(self, Sj):
        if self.config.stress_shape == "traceless":
            return [Sj[0], -Sj[0], Sj[3]]
        return [Sj[0], Sj[3], Sj[6]]

    def _integrands(self, jets, x, h):
        """Residual densities per test field and slot."""
        co = self.form.coefficients()
        cfg = self.config
        th, thx, thy = jets["theta"]
        u1, u1x, u1y, u2, u2x, u2y = jets["u"]
        p, = jets["p"][:1]
        D = [u1x, u2y, 0.5 * (u1y + u2x)]
        div = u1x + u2y
        conv_u = [u1 * u1x + u2 * u1y, u1 * u2x + u2 * u2y]  # (u . grad) u
        M, nq = x.shape[:2]
        zero = np.zeros((M, nq))
        Dv = _stack(D)
        thv = th.v

        if cfg.formulation == "three":
            ev = self.model.eval_stress(Dv, thv)
            S = _tensor_jets(ev.S, [(ev.dS_dD, D), (ev.dS_dtheta, th)])
        else:
            S = self._stress_voigt(jets["S"])
            Sv = _stack(S)
            ev = self.model.eval_G(Sv, Dv, thv)
            G = _tensor_jets(ev.G, [(ev.dG_dS, S), (ev.dG_dD, D), (ev.dG_dtheta, th)])

        R = {}
        # momentum, slots (v1, v1x, v1y, v2, v2x, v2y)
        Ru = [zero] * 6
        Ru[1] = co.visc * S[0] - p
        Ru[5] = co.visc * S[1] - p
        Ru[2] = co.visc * S[2]
        Ru[4] = co.visc * S[2]
        if cfg.pair == "sv":
            Ru[0] = co.conv * conv_u[0]
            Ru[3] = co.conv * conv_u[1]
        else:
            Ru[0] = 0.5 * co.conv * conv_u[0]
            Ru[3] = 0.5 * co.conv * conv_u[1]
            uu = [u1, u2]
            for i in range(2):
                for j in range(2):
                    Ru[3 * i + 1 + j] = Ru[3 * i + 1 + j] - 0.5 * co.conv * (uu[j] * uu[i])
        if co.buoy:
            Ru[3] = Ru[3] - co.buoy * th
        if self.forcing is not None and self.load_degree is None:
            f1, f2 = self._forcing_at(x)
            Ru[0] = Ru[0] - f1
            Ru[3] = Ru[3] - f2
        R["u"] = Ru

        # mass
        Rp = [zero] * (3 * self.disc.spaces["p"].ncomp)
        Rp[0] = -div
        if self.p1p1:
            tau = self.stab.p1p1_coeff * (h ** 2)[:, None]
            px, py = jets["p"][1], jets["p"][2]
            mom = [co.conv * (conv_u[0] + u1 * div) + px,
                   co.conv * (conv_u[1] + u2 * div) + py]
            Rp[1] = -tau * mom[0]
            Rp[2] = -tau * mom[1]
        R["p"] = Rp

        # energy, slots (eta, eta_x, eta_y)
        kap = th.law(co.kappa)
        Rt = [zero, co.cond * kap * thx, co.cond * kap * thy]
        ugt = u1 * thx + u2 * thy
        if cfg.pair == "sv":
            Rt[0] = ugt
        else:
            Rt[0] = 0.5 * ugt
            Rt[1] = Rt[1] - 0.5 * th * u1
            Rt[2] = Rt[2] - 0.5 * th * u2
        if co.adi:
            Rt[0] = Rt[0] + co.adi * (th + co.Theta) * u2
        if co.diss:
            Rt[0] = Rt[0] - co.diss * _dot(S, D)
        if self.heat_source is not None and self.load_degree is None:
            Rt[0] = Rt[0] - self._source_at(x)
        R["theta"] = Rt

        if cfg.formulation == "four":
            nS = self.disc.spaces["S"].ncomp
            Rs = [zero] * (3 * nS)
            if cfg.stress_shape == "traceless":
                Rs[0] = G[0] - G[1]
                Rs[3] = 2.0 * G[2]
            else:
                Rs[0], Rs[3], Rs[6] = G[0], G[1], 2.0 * G[2]
            R["S"] = Rs
        return R

    _forcing_cache: dict = field(default_factory=dict, repr=False)

    def _forcing_at(self, x):
        key = ("f", x.shape)
        if key not in self._forcing_cache:
            f1, f2 = self.forcing(x[..., 0], x[..., 1])
            self._forcing_cache[key] = (np.broadcast_to(f1, x.shape[:2]),
                                        np.broadcast_to(f2, x.shape[:2]))
        return self._forcing_cache[key]

    def _source_at(self, x):
        key = ("g", x.shape)
        if key not in self._forcing_cache:
            self._forcing_cache[key] = np.broadcast_to(self.heat_source(x[..., 0], x[..., 1]),
                                                       x.shape[:2])
        return self._forcing_cache[key]

    def _load(self) -> np.ndarray:
        """Forcing and heat-source load vector at ``load_degree`` quadrature."""
        if "load" not in self._forcing_cache:
            x, w, _, B = self.disc.cell_data(self.load_degree)
            L = np.zeros(self.size)
            parts = []
            if self.forcing is not None:
                f1, f2 = self.forcing(x[..., 0], x[..., 1])
                parts.append(("u", 0, f1))
                parts.append(("u", 3, f2))
            if self.heat_source is not None:
                parts.append(("theta", 0, self.heat_source(x[..., 0], x[..., 1])))
            for name, slot, f in parts:
                loc = np.einsum("mq,mqi->mi", np.broadcast_to(f, w.shape) * w, B[name][:, :, slot])
                L += np.bincount((self.layout.offsets[name]
                                  + self.disc.spaces[name].cell_dofs).ravel(),
                                 loc.ravel(), minlength=self.size)
            self._forcing_cache["load"] = L
        return self._forcing_cache["load"]

    def _assemble(self, z, jacobian=True):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"state has length {z.shape}, expected {self.size}")
        disc, layout = self.disc, self.layout
        x, w, h, B = disc.cell_data(self.quad_degree)
        jets = self._field_jets(z, B, jacobian)
        R = self._integrands(jets, x, h)
        offs, _ = disc.slot_offsets()
        F = np.zeros(self.size)
        rows, cols, data = [], [], []
        for a in disc.names:
            Va = disc.spaces[a]
            Ra = R[a]
            ns = len(Ra)
            vals = np.stack([np.broadcast_to(r.v if isinstance(r, Jet) else r, w.shape)
                             for r in Ra], axis=-1)
            loc = np.einsum("mqs,mqsi->mi", vals * w[..., None], B[a])
            F += np.bincount((layout.offsets[a] + Va.cell_dofs).ravel(), loc.ravel(),
                             minlength=self.size)
            if not jacobian:
                continue
            for b in disc.names:
                Vb = disc.spaces[b]
                nt = 3 * Vb.ncomp
                dense = None
                for s, r in enumerate(Ra):
                    if not isinstance(r, Jet) or not r.d:
                        continue
                    for key, dv in r.d.items():
                        t = key - offs[b]
                        if 0 <= t < nt:
                            if dense is None:
                                dense = np.zeros(w.shape + (ns, nt))
                            dense[..., s, t] += dv
                if dense is None:
                    continue
                dense *= w[..., None, None]
                tmp = np.einsum("mqst,mqtj->mqsj", dense, B[b])
                K = np.einsum("mqsi,mqsj->mij", B[a], tmp)
                ra = layout.offsets[a] + Va.cell_dofs
                cb = layout.offsets[b] + Vb.cell_dofs
                rows.append(np.broadcast_to(ra[:, :, None], K.shape).ravel())
                cols.append(np.broadcast_to(cb[:, None, :], K.shape).ravel())
                data.append(K.ravel())

        if self.stab.velocity_ip or self.stab.temperature_ip:
            self._ip_terms(z, F, rows, cols, data, jacobian)
        if self.load_degree is not None and (self.forcing or self.heat_source):
            F -= self._load()

        dofs, vals = self.dirichlet()
        F[dofs] = z[dofs] - vals
        if not jacobian:
            return F, None
        n = self.size
        J = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        keep = np.ones(n)
        keep[dofs] = 0.0
        J = (sp.diags(keep) @ J + sp.diags(1.0 - keep)).tocsr()
        J.sum_duplicates()
        J.sort_indices()
        return F, J

    def _ip_terms(self, z, F, rows, cols, data, jacobian):
        """Interior-penalty jump stabilisation with velocity-dependent weight."""
        disc, layout = self.disc, self.layout
        fd = disc.facet_data()
        V = disc.spaces["u"]
        mesh = self.mesh
        cells = mesh.edge_cells[mesh.interior_edges]
        nl = V.nloc
        uc = V.components(z[layout.slice("u")])[:, V.cell_nodes]  # (2, M, nl)
        mag = np.hypot(uc[0], uc[1])
        amax = np.argmax(mag, axis=1)
        M = mesh.num_cells
        umax = mag[np.arange(M), amax]
        c = self.stab.ip_coeff
        delta = 0.5 * c * (umax[cells[:, 0]] + umax[cells[:, 1]])
        # d delta / d u on concatenated (+, -) velocity dofs
        nF = len(cells)
        ddelta = np.zeros((nF, 2 * 2 * nl))
        for side in (0, 1):
            cs = cells[:, side]
            a = amax[cs]
            um = umax[cs]
            safe = np.where(um > 0, um, 1.0)
            for comp in range(2):
                g = np.where(um > 0, uc[comp][cs, a] / safe, 0.0)
                ddelta[np.arange(nF), side * 2 * nl + comp * nl + a] = 0.5 * c * g
        u_dofs = np.concatenate([V.cell_dofs[cells[:, 0]], V.cell_dofs[cells[:, 1]]], axis=1)
        u_glob = layout.offsets["u"] + u_dofs

        def jump_block(name):
            ctx = fd[name]
            Jm = np.concatenate([ctx.test[0].dphi, -ctx.test[1].dphi], axis=3)
            Vn = disc.spaces[name]
            dofs = np.concatenate([Vn.cell_dofs[cells[:, 0]], Vn.cell_dofs[cells[:, 1]]], axis=1)
            U = z[layout.offsets[name] + dofs]
            wh2 = ctx.w * (ctx.h ** 2)[:, None]
            ju = np.einsum("cfqid,fi->cfqd", Jm, U)
            aI = np.einsum("fq,cfqd,cfqid->fi", wh2, ju, Jm)
            glob = layout.offsets[name] + dofs
            F[:] += np.bincount(glob.ravel(), (delta[:, None] * aI).ravel(), minlength=self.size)
            if jacobian:
                K = np.einsum("fq,cfqid,cfqjd->fij", wh2, Jm, Jm) * delta[:, None, None]
                rows.append(np.broadcast_to(glob[:, :, None], K.shape).ravel())
                cols.append(np.broadcast_to(glob[:, None, :], K.shape).ravel())
                data.append(K.ravel())
                L = aI[:, :, None] * ddelta[:, None, :]
                rows.append(np.broadcast_to(glob[:, :, None], L.shape).ravel())
                cols.append(np.broadcast_to(u_glob[:, None, :], L.shape).ravel())
                data.append(L.ravel())

        if self.stab.velocity_ip:
            jump_block("u")
        if self.stab.temperature_ip:
            jump_block("theta")

    # ------------------------------------------------------------ utilities
    def split(self, z):
        return self.layout.split(z)

    def normalize_pressure(self, z: np.ndarray) -> np.ndarray:
        """Shift the pressure to zero mean (no-op without a pressure nullspace)."""
        if not self.pressure_nullspace:
            return z
        Mp, _ = self.disc.pressure_mass()
        sl = self.layout.pressure_slice
        ones = np.ones(Mp.shape[0])
        area = ones @ Mp @ ones
        z = z.copy()
        z[sl] -= (ones @ Mp @ z[sl]) / area
        return z

    def stress_field(self, z: np.ndarray, xi: np.ndarray):
        """Voigt stress, symmetric gradient and temperature at reference points."""
        V = self.disc.spaces["u"]
        _, gu = V.evaluate(z[self.layout.slice("u")], xi)
        T = self.disc.spaces["theta"]
        th, _ = T.evaluate(z[self.layout.slice("theta")], xi)
        D = np.stack([gu[0, ..., 0], gu[1, ..., 1], 0.5 * (gu[0, ..., 1] + gu[1, ..., 0])], -1)
        if self.config.formulation == "four":
            Sp = self.disc.spaces["S"]
            sv, _ = Sp.evaluate(z[self.layout.slice("S")], xi)
            if self.config.stress_shape == "traceless":
                S = np.stack([sv[0], -sv[0], sv[1]], -1)
            else:
                S = np.stack([sv[0], sv[1], sv[2]], -1)
        else:
            S = self.model.eval_stress(D, th[0]).S
        return S, D, th[0]


# ------------------------------------------------------------ free functions
def assemble_residual(problem: Problem, z: np.ndarray) -> np.ndarray:
    return problem.residual(z)


def assemble_jacobian(problem: Problem, z: np.ndarray) -> BlockSystem:
    return problem.jacobian(z)


def augment(system: BlockSystem, gamma: float, rhs: np.ndarray, Mp_inv: sp.spmatrix | None):
    """Augmented top block ``A + gamma B^T Mp^-1 B`` and rhs ``f + gamma B^T Mp^-1 g``.

    ``Mp_inv`` is the cellwise inverse pressure mass matrix; it may be ``None``
    only when ``gamma == 0``.
    """
    npz = system.npz
    A = system.A.tocsr()
    f = np.array(rhs[:npz], dtype=float)
    if gamma == 0:
        return A, f
    if Mp_inv is None:
        raise ValueError("augmentation needs a discontinuous pressure space")
    B = system.B.tocsr()
    W = (B.T @ Mp_inv).tocsr()
    Ahat = (A + gamma * (W @ B)).tocsr()
    Ahat.sort_indices()
    return Ahat, f + gamma * (W @ rhs[npz:])


def velocity_divergence(space: FunctionSpace, coeffs: np.ndarray) -> float:
    """``||div u||_L2`` evaluated with a rule exact for the squared divergence."""
    rule = quadrature_rule(max(2 * (space.degree - 1), 1))
    _, g = space.evaluate(coeffs, rule.xi)
    div = g[0, ..., 0] + g[1, ..., 1]
    w = np.abs(space.geometry.detJ)[:, None] * rule.weights[None, :]
    return float(np.sqrt((w * div ** 2).sum()))


def divergence_check(problem: Problem, z: np.ndarray) -> float:
    return velocity_divergence(problem.disc.spaces["u"], z[problem.layout.slice("u")])


def build_problem(mesh: Mesh, form, model: RheologyModel, config: FieldConfig, bcs: BCSet,
                  stab: StabilizationConfig | None = None, **kw) -> Problem:
    return Problem(Discretization(mesh, config), form, model, bcs,
                   stab or StabilizationConfig(), **kw)
