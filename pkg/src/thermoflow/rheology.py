"""Constitutive laws with derivatives for Newton linearisation.

Symmetric tensors are stored in Voigt order ``(A11, A22, A12)``; the tensor
inner product is ``A:B = A11 B11 + A22 B22 + 2 A12 B12``.  Derivative
operators ``dX_dY[..., i, j] = dX_i / dY_j`` act on Voigt components.

Explicit models give ``S = S(D, theta)``.  Every model also provides the
implicit residual ``G(S, D, theta)`` used by four-field formulations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

FLOOR = 1e-12
WEIGHT = np.array([1.0, 1.0, 2.0])


# ------------------------------------------------------------------ tensors
def inner(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Tensor contraction ``A:B`` of Voigt arrays."""
    return (A * B * WEIGHT).sum(axis=-1)


def magnitude(A: np.ndarray) -> np.ndarray:
    """Frobenius norm (unfloored)."""
    return np.sqrt(np.maximum(inner(A, A), 0.0))


def to_matrix(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return np.stack([np.stack([A[..., 0], A[..., 2]], -1),
                     np.stack([A[..., 2], A[..., 1]], -1)], -2)


def from_matrix(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.stack([M[..., 0, 0], M[..., 1, 1], 0.5 * (M[..., 0, 1] + M[..., 1, 0])], -1)


def _floored(A):
    n = magnitude(A)
    active = n > FLOOR
    return np.where(active, n, FLOOR), active


# ----------------------------------------------------------- smooth max/min
def smooth_max(x, y, eps):
    """``(x + y + sqrt((x - y)^2 + eps^2)) / 2``."""
    return 0.5 * (x + y + np.sqrt((np.subtract(x, y)) ** 2 + eps ** 2))


def smooth_min(x, y, eps):
    """``(x + y - sqrt((x - y)^2 + eps^2)) / 2``."""
    return 0.5 * (x + y - np.sqrt((np.subtract(x, y)) ** 2 + eps ** 2))


def _smooth_slope(x, y, eps):
    # d sqrt((x-y)^2 + eps^2) / dx, taken as 0 at the kink of the eps = 0 limit
    d = np.subtract(x, y)
    r = np.sqrt(d ** 2 + eps ** 2)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, d / safe, 0.0)


def smooth_max_grad(x, y, eps):
    """Partial derivatives ``(d/dx, d/dy)`` of :func:`smooth_max`."""
    s = _smooth_slope(x, y, eps)
    return 0.5 * (1 + s), 0.5 * (1 - s)


def smooth_min_grad(x, y, eps):
    s = _smooth_slope(x, y, eps)
    return 0.5 * (1 - s), 0.5 * (1 + s)


# --------------------------------------------------------------- scalar laws
class ScalarLaw:
    """Scalar function of temperature with first derivative."""

    def __call__(self, s):
        raise NotImplementedError

    def deriv(self, s):
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(ScalarLaw):
    c: float

    def __call__(self, s):
        return np.full(np.shape(s), float(self.c))

    def deriv(self, s):
        return np.zeros(np.shape(s))


@dataclass(frozen=True)
class Exponential(ScalarLaw):
    """``a * exp(b * s)``."""

    a: float
    b: float

    def __call__(self, s):
        return self.a * np.exp(self.b * np.asarray(s, dtype=float))

    def deriv(self, s):
        return self.a * self.b * np.exp(self.b * np.asarray(s, dtype=float))


@dataclass(frozen=True)
class Affine(ScalarLaw):
    """``a * s + b``."""

    a: float
    b: float

    def __call__(self, s):
        return self.a * np.asarray(s, dtype=float) + self.b

    def deriv(self, s):
        return np.full(np.shape(s), float(self.a))


@dataclass(frozen=True)
class Quadratic(ScalarLaw):
    """``a * s**2 + b * s + c``."""

    a: float
    b: float
    c: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return (self.a * s + self.b) * s + self.c

    def deriv(self, s):
        return 2 * self.a * np.asarray(s, dtype=float) + self.b


@dataclass(frozen=True)
class SmoothedRamp(ScalarLaw):
    """``max_eps(0, min_eps(v, v (s - s_on) / (s_on - s_off) + v))``.

    Equals ``level`` beyond ``s_on`` and vanishes beyond ``s_off`` (up to the
    smoothing).
    """

    level: float
    s_on: float
    s_off: float
    eps: float

    def __post_init__(self):
        if self.s_on == self.s_off:
            raise ValueError("SmoothedRamp needs s_on != s_off")

    def _parts(self, s):
        s = np.asarray(s, dtype=float)
        slope = self.level / (self.s_on - self.s_off)
        lin = slope * (s - self.s_on) + self.level
        inner_ = smooth_min(self.level, lin, self.eps)
        return slope, lin, inner_

    def __call__(self, s):
        _, _, m = self._parts(s)
        return smooth_max(0.0, m, self.eps)

    def deriv(self, s):
        slope, lin, m = self._parts(s)
        _, dmin = smooth_min_grad(self.level, lin, self.eps)
        _, dmax = smooth_max_grad(0.0, m, self.eps)
        return dmax * dmin * slope


def as_law(v) -> ScalarLaw:
    return v if isinstance(v, ScalarLaw) else Constant(float(v))


# ---------------------------------------------------------------- results
class StressEval(NamedTuple):
    S: np.ndarray  # (..., 3)
    dS_dD: np.ndarray  # (..., 3, 3)
    dS_dtheta: np.ndarray  # (..., 3)


class GEval(NamedTuple):
    G: np.ndarray
    dG_dS: np.ndarray
    dG_dD: np.ndarray
    dG_dtheta: np.ndarray


def _isotropic(phi, dphi_dn, dphi_dth, A):
    """Value and derivatives of ``phi(|A|, theta) * A``."""
    n, active = _floored(A)
    g = np.where(active[..., None], A * WEIGHT / n[..., None], 0.0)
    eye = np.broadcast_to(np.eye(3), A.shape + (3,))
    dA = phi[..., None, None] * eye + (A * dphi_dn[..., None])[..., :, None] * g[..., None, :]
    return phi[..., None] * A, dA, dphi_dth[..., None] * A


# ------------------------------------------------------------------ models
class RheologyModel:
    """Base class; explicit models implement :meth:`eval_stress`."""

    explicit = True
    name = "model"

    def eval_stress(self, D, theta) -> StressEval:
        raise ValueError(f"{type(self).__name__} has no explicit stress form")

    def eval_G(self, S, D, theta) -> GEval:
        """Implicit residual ``G = S - S(D, theta)`` for explicit models."""
        S = np.asarray(S, dtype=float)
        ev = self.eval_stress(D, theta)
        eye = np.broadcast_to(np.eye(3), S.shape + (3,))
        return GEval(S - ev.S, eye.copy(), -ev.dS_dD, -ev.dS_dtheta)

    def graph_point(self, D, theta):
        """Return ``(S, D)`` pairs on the graph of the relation."""
        return self.eval_stress(D, theta).S, np.asarray(D, dtype=float)

    def viscosity_scale(self, theta=0.0) -> float:
        return 1.0


@dataclass(frozen=True)
class Newtonian(RheologyModel):
    """``S = 2 mu(theta) D``."""

    mu: ScalarLaw = Constant(0.5)
    name = "newtonian"

    def eval_stress(self, D, theta):
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        zero = np.zeros(th.shape)
        return StressEval(*_isotropic(2 * self.mu(th), zero, 2 * self.mu.deriv(th), D))


@dataclass(frozen=True)
class PowerLaw(RheologyModel):
    """``S = K(theta) |D|^(r-2) D``."""

    r: float = 2.0
    K: ScalarLaw = Constant(1.0)
    name = "powerlaw"

    def __post_init__(self):
        if not self.r > 1:
            raise ValueError("power-law exponent must exceed 1")

    def eval_stress(self, D, theta):
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        n, active = _floored(D)
        p = n ** (self.r - 2)
        K = self.K(th)
        dn = np.where(active, K * (self.r - 2) * n ** (self.r - 3), 0.0)
        return StressEval(*_isotropic(K * p, dn, self.K.deriv(th) * p, D))


@dataclass(frozen=True)
class BinghamRegularized(RheologyModel):
    """``sqrt(eps^2 + |D|^2) S = (Bn tau(theta) + 2 mu(theta) |D|) D``.

    With ``multiplied=True`` the four-field residual is the relation as
    written, ``G = sqrt(eps^2 + |D|^2) S - (Bn tau + 2 mu |D|) D``, instead of
    ``S - S(D, theta)``; both share the same zero set.
    """

    mu: ScalarLaw = Constant(1.0)
    tau: ScalarLaw = Constant(1.0)
    Bn: float = 1.0
    eps: float = 1e-3
    multiplied: bool = False
    name = "bingham"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("regularisation eps must be positive")

    def with_eps(self, eps):
        return BinghamRegularized(self.mu, self.tau, self.Bn, eps, self.multiplied)

    def eval_G(self, S, D, theta):
        if not self.multiplied:
            return super().eval_G(S, D, theta)
        S = np.asarray(S, dtype=float)
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        n, active = _floored(D)
        nD = magnitude(D)
        q = np.sqrt(self.eps ** 2 + nD ** 2)
        mu, tau = self.mu(th), self.tau(th)
        phi = self.Bn * tau + 2 * mu * nD
        wD = D * WEIGHT
        eye = np.broadcast_to(np.eye(3), D.shape + (3,))
        dq = wD / q[..., None]
        dphi = np.where(active[..., None], 2 * mu[..., None] * wD / n[..., None], 0.0)
        G = q[..., None] * S - phi[..., None] * D
        dG_dS = q[..., None, None] * eye
        dG_dD = S[..., :, None] * dq[..., None, :] - phi[..., None, None] * eye \
            - D[..., :, None] * dphi[..., None, :]
        dG_dth = -(self.Bn * self.tau.deriv(th) + 2 * self.mu.deriv(th) * nD)[..., None] * D
        return GEval(G, dG_dS, dG_dD, dG_dth)

    def eval_stress(self, D, theta):
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        n = magnitude(D)
        q = np.sqrt(self.eps ** 2 + n ** 2)
        mu, tau = self.mu(th), self.tau(th)
        num = self.Bn * tau + 2 * mu * n
        phi = num / q
        dn = 2 * mu / q - num * n / q ** 3
        dth = (self.Bn * self.tau.deriv(th) + 2 * self.mu.deriv(th) * n) / q
        return StressEval(*_isotropic(phi, dn, dth, D))


@dataclass(frozen=True)
class TruncatedStress(RheologyModel):
    """``S^n = min(n + 2 mu, (2 mu (|D| - sigma)^+ + tau) / |D|) D``."""

    n: float = 1.0
    mu: ScalarLaw = Constant(1.0)
    tau: ScalarLaw = Constant(0.0)
    sigma: ScalarLaw = Constant(0.0)
    name = "truncated-stress"

    def eval_stress(self, D, theta):
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        m, active = _floored(D)
        mu, tau, sig = self.mu(th), self.tau(th), self.sigma(th)
        yielded = m > sig
        excess = np.where(yielded, m - sig, 0.0)
        ratio = (2 * mu * excess + tau) / m
        cap = self.n + 2 * mu
        use_cap = cap <= ratio
        phi = np.where(use_cap, cap, ratio)
        dr_dm = np.where(active, (2 * mu * yielded - ratio) / m, 0.0)
        dr_dth = (2 * self.mu.deriv(th) * excess - 2 * mu * yielded * self.sigma.deriv(th)
                  + self.tau.deriv(th)) / m
        dn = np.where(use_cap, 0.0, dr_dm)
        dth = np.where(use_cap, 2 * self.mu.deriv(th), dr_dth)
        return StressEval(*_isotropic(phi, dn, dth, D))


@dataclass(frozen=True)
class TruncatedStrain(RheologyModel):
    """``D^n(S) = min(n + 1/(2 mu), ((|S| - tau)^+ / (2 mu) + sigma) / |S|) S``.

    Implicit relation ``G = D^n(S, theta) - D``; no explicit stress form.
    """

    n: float = 1.0
    mu: ScalarLaw = Constant(1.0)
    tau: ScalarLaw = Constant(0.0)
    sigma: ScalarLaw = Constant(0.0)
    explicit = False
    name = "truncated-strain"

    def strain(self, S, theta):
        """Value and derivatives of ``D^n(S, theta)``."""
        S = np.asarray(S, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), S.shape[:-1])
        m, active = _floored(S)
        mu, tau, sig = self.mu(th), self.tau(th), self.sigma(th)
        dmu = self.mu.deriv(th)
        yielded = m > tau
        excess = np.where(yielded, m - tau, 0.0)
        ratio = (excess / (2 * mu) + sig) / m
        cap = self.n + 1 / (2 * mu)
        use_cap = cap <= ratio
        phi = np.where(use_cap, cap, ratio)
        dr_dm = np.where(active, (yielded / (2 * mu) - ratio) / m, 0.0)
        dr_dth = (-1.0 * yielded * self.tau.deriv(th) / (2 * mu)
                  - excess * dmu / (2 * mu ** 2) + self.sigma.deriv(th)) / m
        dn = np.where(use_cap, 0.0, dr_dm)
        dth = np.where(use_cap, -dmu / (2 * mu ** 2), dr_dth)
        return _isotropic(phi, dn, dth, S)

    def eval_G(self, S, D, theta):
        D = np.asarray(D, dtype=float)
        val, dS, dth = self.strain(S, theta)
        eye = np.broadcast_to(np.eye(3), D.shape + (3,))
        return GEval(val - D, dS, -eye.copy(), dth)

    def graph_point(self, S, theta):
        S = np.asarray(S, dtype=float)
        return S, self.strain(S, theta)[0]


@dataclass(frozen=True)
class ImplicitBinghamEuler(RheologyModel):
    """Regularised Bingham / activated-Euler relation.

    ``G = 2 mu max_eps(0, |D| - sigma) D / |D| - max_eps(0, |S| - tau) S / |S|``
    with ``|D|`` and ``|S|`` floored at 1e-12 in the denominators.
    """

    mu: ScalarLaw = Constant(0.5)
    tau: ScalarLaw = Constant(0.0)
    sigma: ScalarLaw = Constant(0.0)
    eps: float = 1e-4
    explicit = False
    name = "bingham-euler"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("regularisation eps must be positive")

    def with_eps(self, eps):
        def upd(law):
            if isinstance(law, SmoothedRamp):
                return SmoothedRamp(law.level, law.s_on, law.s_off, eps)
            return law
        return ImplicitBinghamEuler(self.mu, upd(self.tau), upd(self.sigma), eps)

    def _branch(self, A, thr, dthr, eps):
        # psi(|A|) = max_eps(0, |A| - thr) / |A| and its derivatives
        m, active = _floored(A)
        x = magnitude(A) - thr
        a = smooth_max(0.0, x, eps)
        _, da = smooth_max_grad(0.0, x, eps)
        psi = a / m
        dpsi_dm = np.where(active, (da * m - a) / m ** 2, 0.0)
        dpsi_dth = -da * dthr / m
        return psi, dpsi_dm, dpsi_dth, a, m

    def eval_G(self, S, D, theta):
        S = np.asarray(S, dtype=float)
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        mu, dmu = self.mu(th), self.mu.deriv(th)
        pD, pD_m, pD_th, _, _ = self._branch(D, self.sigma(th), self.sigma.deriv(th), self.eps)
        pS, pS_m, pS_th, _, _ = self._branch(S, self.tau(th), self.tau.deriv(th), self.eps)
        t1, d1, th1 = _isotropic(2 * mu * pD, 2 * mu * pD_m, 2 * dmu * pD + 2 * mu * pD_th, D)
        t2, d2, th2 = _isotropic(pS, pS_m, pS_th, S)
        return GEval(t1 - t2, -d2, d1, th1 - th2)

    def effective_viscosity(self, S, D, theta):
        S = np.asarray(S, dtype=float)
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        pD = self._branch(D, self.sigma(th), 0.0, self.eps)[0]
        pS = self._branch(S, self.tau(th), 0.0, self.eps)[0]
        return 2 * self.mu(th) * pD / (FLOOR + pS)

    def graph_point(self, D, theta):
        """Stress on the graph: ``S`` parallel to ``D`` solving ``G = 0``.

        Points where no positive stress magnitude exists are returned as NaN.
        """
        D = np.asarray(D, dtype=float)
        th = np.broadcast_to(np.asarray(theta, dtype=float), D.shape[:-1])
        n, _ = _floored(D)
        y = 2 * self.mu(th) * smooth_max(0.0, magnitude(D) - self.sigma(th), self.eps)
        s = self.tau(th) + y - self.eps ** 2 / (4 * y)
        s = np.where(s > 0, s, np.nan)
        return (s / n)[..., None] * D, D

    def viscosity_scale(self, theta=0.0):
        return float(2 * self.mu(np.asarray(theta)))


def effective_viscosity(model: RheologyModel, S, D, theta):
    if not isinstance(model, ImplicitBinghamEuler):
        raise ValueError("effective viscosity is defined for the Bingham/Euler relation")
    return model.effective_viscosity(S, D, theta)


def eval_stress(model: RheologyModel, D, theta) -> StressEval:
    if not model.explicit:
        raise ValueError(f"{model.name} is not an explicit model")
    return model.eval_stress(D, theta)


def eval_G(model: RheologyModel, S, D, theta) -> GEval:
    return model.eval_G(S, D, theta)


# ------------------------------------------------------------- diagnostics
def _random_sym(rng, n, mag_range):
    A = rng.standard_normal((n, 3))
    lo, hi = np.log(mag_range[0]), np.log(mag_range[1])
    mags = np.exp(rng.uniform(lo, hi, n))
    return A / magnitude(A)[:, None] * mags[:, None]


def check_graph_properties(model: RheologyModel, samples: int = 10_000,
                           theta_range=(0.0, 1.0), magnitude_range=(1e-3, 10.0),
                           seed: int = 0) -> dict:
    """Sample the graph of ``model`` and report monotonicity and coercivity.

    Returns a dict with the minimum of ``(S1 - S2):(D1 - D2)`` over pairs at
    equal temperature and coercivity constants ``(alpha, beta)`` fitted so that
    ``S:D >= alpha (|S|^2 + |D|^2) - beta`` on all samples.
    """
    rng = np.random.default_rng(seed)
    th = rng.uniform(*theta_range, samples)
    X1 = _random_sym(rng, samples, magnitude_range)
    X2 = _random_sym(rng, samples, magnitude_range)
    S1, D1 = model.graph_point(X1, th)
    S2, D2 = model.graph_point(X2, th)
    prod = inner(S1 - S2, D1 - D2)
    ok = np.isfinite(prod)
    sd = inner(S1, D1)
    q = magnitude(S1) ** 2 + magnitude(D1) ** 2
    good = np.isfinite(sd)
    big = good & (q >= np.quantile(q[good], 0.75))
    alpha = float(max(np.min(sd[big] / q[big]), 0.0))
    beta = float(max(np.max(alpha * q[good] - sd[good]), 0.0))
    return {
        "samples": int(ok.sum()),
        "min_monotonicity": float(np.min(prod[ok])),
        "alpha": alpha,
        "beta": beta,
        "coercivity_margin": float(np.min(sd[good] - alpha * q[good] + beta)),
        "monotone": bool(np.min(prod[ok]) >= -1e-10),
    }


def bingham_poiseuille(y, Bn: float, mu: float = 1.0, tau: float = 1.0):
    """Fully developed Bingham channel profile on ``y`` in ``[-1, 1]``.

    The driving pressure gradient is fixed at ``2 mu`` so that the Newtonian
    limit is ``1 - y^2``.  The plug occupies ``|y| <= Bn tau / (2 sqrt(2) mu)``.
    """
    if Bn < 0:
        raise ValueError("Bingham number must be non-negative")
    y = np.abs(np.asarray(y, dtype=float))
    G = 2.0 * mu
    y0 = Bn * tau / (np.sqrt(2.0) * G)
    if y0 >= 1:
        return np.zeros_like(y)
    yy = np.maximum(y, y0)
    return G / (2 * mu) * (1 - yy ** 2) - Bn * tau / (np.sqrt(2.0) * mu) * (1 - yy)


def plug_halfwidth(Bn: float, mu: float = 1.0, tau: float = 1.0) -> float:
    return float(Bn * tau / (2.0 * np.sqrt(2.0) * mu))


MODELS = {
    "newtonian": Newtonian,
    "powerlaw": PowerLaw,
    "bingham": BinghamRegularized,
    "bingham-euler": ImplicitBinghamEuler,
    "truncated-stress": TruncatedStress,
    "truncated-strain": TruncatedStrain,
}
