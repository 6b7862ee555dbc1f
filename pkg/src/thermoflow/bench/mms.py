"""Manufactured solution for the power-law Boussinesq system."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sy

X, Y = sy.symbols("x y", real=True)


def _exact_fields():
    psi = sy.sin(sy.pi * X) * sy.sin(sy.pi * Y) * (X ** 2 - 1) * (Y ** 2 - 1)
    u = (sy.diff(psi, Y), -sy.diff(psi, X))
    p = Y ** 2 - X ** 2
    theta = X ** 2 - Y ** 4
    return u, p, theta


@dataclass(frozen=True)
class PowerLawMMS:
    """Exact fields and consistent forcing on the unit square.

    The stress is ``K(theta) |D|^(r-2) D`` with ``K = exp(-theta/4)`` and the
    conductivity is ``exp(4 theta)``; the momentum and energy equations use
    Rayleigh scaling.
    """

    r: float = 3.5
    Ra: float = 1e4
    Pr: float = 1.0
    Di: float = 0.3
    Theta: float = 0.0
    K_rate: float = -0.25
    kappa_rate: float = 4.0

    @cached_property
    def _symbols(self):
        u, p, th = _exact_fields()
        D = sy.Matrix([[sy.diff(u[0], X), (sy.diff(u[0], Y) + sy.diff(u[1], X)) / 2],
                       [(sy.diff(u[0], Y) + sy.diff(u[1], X)) / 2, sy.diff(u[1], Y)]])
        nD = sy.sqrt(sum(D[i, j] ** 2 for i in range(2) for j in range(2)))
        K = sy.exp(self.K_rate * th)
        S = K * nD ** sy.Float(self.r - 2) * D
        kap = sy.exp(self.kappa_rate * th)
        uv = sy.Matrix(u)
        conv = [sum(uv[j] * sy.diff(uv[i], v) for j, v in enumerate((X, Y))) for i in range(2)]
        divS = [sy.diff(S[i, 0], X) + sy.diff(S[i, 1], Y) for i in range(2)]
        f = [-self.Pr * divS[i] + conv[i] + sy.diff(p, (X, Y)[i]) for i in range(2)]
        f[1] -= self.Ra * self.Pr * th
        SD = sum(S[i, j] * D[i, j] for i in range(2) for j in range(2))
        g = (-(sy.diff(kap * sy.diff(th, X), X) + sy.diff(kap * sy.diff(th, Y), Y))
             + u[0] * sy.diff(th, X) + u[1] * sy.diff(th, Y)
             + self.Di * (th + self.Theta) * u[1] - self.Di / self.Ra * SD)
        return {"u": u, "p": p, "theta": th, "S": (S[0, 0], S[1, 1], S[0, 1]),
                "f": f, "g": g}

    def _fn(self, expr):
        fn = sy.lambdify((X, Y), expr, modules="numpy", cse=True)

        def call(x, y):
            with np.errstate(divide="ignore", invalid="ignore"):
                out = fn(x, y)
            if isinstance(out, (list, tuple)):
                return [np.nan_to_num(np.broadcast_to(o, np.shape(x)).astype(float)) for o in out]
            return np.nan_to_num(np.broadcast_to(out, np.shape(x)).astype(float))

        return call

    @cached_property
    def velocity(self):
        return self._fn(list(self._symbols["u"]))

    @cached_property
    def pressure(self):
        return self._fn(self._symbols["p"])

    @cached_property
    def temperature(self):
        return self._fn(self._symbols["theta"])

    @cached_property
    def stress(self):
        """Voigt components ``(S11, S22, S12)``."""
        return self._fn(list(self._symbols["S"]))

    @cached_property
    def forcing(self):
        return self._fn(list(self._symbols["f"]))

    @cached_property
    def heat_source(self):
        return self._fn(self._symbols["g"])
