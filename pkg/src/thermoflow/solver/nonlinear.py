"""Newton iteration and parameter continuation."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ..fem.bc import eliminate
from ..formulation import BlockSystem, Problem, augment
from .al import build_al_preconditioner
from .linear import KrylovConfig, SingularMatrixError, gmres, sparse_lu


@dataclass(frozen=True)
class NewtonConfig:
    atol: float = 1e-8
    max_iter: int = 50
    line_search: bool = False  # backtrack on ||F|| when a full step does not reduce it
    max_backtracks: int = 8

    def __post_init__(self):
        if not self.atol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1 or self.max_backtracks < 0:
            raise ValueError("max_iter must be positive and max_backtracks non-negative")


@dataclass(frozen=True)
class MonolithicDirect:
    """Sparse LU of the whole Jacobian (one pressure dof pinned if needed)."""

    name = "direct"


@dataclass(frozen=True)
class ALKrylov:
    """GMRES with the augmented-Lagrangian preconditioner."""

    gamma: float = 1e4
    krylov: KrylovConfig = KrylovConfig()
    name = "al"


@dataclass
class NewtonResult:
    converged: bool
    iterations: int
    residuals: list
    krylov: list
    message: str = ""

    @property
    def avg_krylov(self) -> float:
        return float(np.mean(self.krylov)) if self.krylov else 0.0


@dataclass
class StepReport:
    param: float
    dofs: int
    newton_iters: int
    krylov: list
    avg_krylov: float
    residuals: list
    converged: bool
    wall_time: float
    extra: dict = field(default_factory=dict)


@dataclass
class SolveReport:
    """Per continuation step Newton and Krylov counts."""

    steps: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, param, dofs, res: NewtonResult, wall, **extra):
        self.steps.append(StepReport(float(param), int(dofs), res.iterations, list(res.krylov),
                                     res.avg_krylov, [float(r) for r in res.residuals],
                                     bool(res.converged), float(wall), dict(extra)))

    @property
    def converged(self) -> bool:
        return bool(self.steps) and all(s.converged for s in self.steps)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "steps": [asdict(s) for s in self.steps]}


class NewtonFailure(RuntimeError):
    pass


def linear_solve(problem: Problem, system: BlockSystem, F: np.ndarray, strategy) -> tuple:
    """Solve ``J dz = -F`` with Dirichlet rows eliminated; returns ``(dz, iterations)``."""
    dofs, _ = problem.dirichlet()
    A, rhs = eliminate(system.matrix, -F, dofs, -F[dofs])
    sys_e = BlockSystem(A, problem.layout)
    npz = sys_e.npz
    null = problem.pressure_nullspace
    if isinstance(strategy, ALKrylov):
        _, Mp_inv = problem.disc.pressure_mass()
        if strategy.gamma > 0 and Mp_inv is None:
            raise ValueError("AL augmentation needs a discontinuous pressure space")
        Ahat, fhat = augment(sys_e, strategy.gamma, rhs, Mp_inv)
        K = sp.bmat([[Ahat, sys_e.Bt], [sys_e.B, sys_e.C]], format="csr")
        pc = build_al_preconditioner(BlockSystem(K, problem.layout), strategy.gamma,
                                     problem.nu_ref, Mp_inv)
        b = np.concatenate([fhat, rhs[npz:]])
        ns = None
        if null:
            ns = np.zeros(len(b))
            ns[npz:] = 1.0
        res = gmres(K, pc, b, strategy.krylov, nullspace=ns)
        return res.x, res.iterations, res.converged
    if null:
        p0 = npz
        A, rhs = eliminate(A, rhs, np.array([p0]), np.array([0.0]))
    dz = sparse_lu(A).solve(rhs)
    return dz, 0, True


def newton_solve(problem: Problem, z0: np.ndarray, config: NewtonConfig = NewtonConfig(),
                 strategy=MonolithicDirect(), callback: Callable | None = None):
    """Newton iteration until ``||F(z)||_2 <= atol``.

    Steps are undamped unless ``config.line_search`` is set, in which case the
    step is halved until the residual norm decreases.  Returns
    ``(z, NewtonResult)``; non-convergence is reported, not raised.
    """
    z = problem.lift(z0)
    residuals, krylov = [], []
    trial = None
    for it in range(config.max_iter + 1):
        F, J = trial if trial is not None else problem.assemble(z)
        trial = None
        r = float(np.linalg.norm(F))
        residuals.append(r)
        if callback is not None:
            callback(it, z, r)
        if not np.isfinite(r):
            return z, NewtonResult(False, it, residuals, krylov, "non-finite residual")
        if r <= config.atol:
            return problem.normalize_pressure(z), NewtonResult(True, it, residuals, krylov)
        if it == config.max_iter:
            break
        try:
            dz, kits, ok = linear_solve(problem, J, F, strategy)
        except SingularMatrixError as exc:
            return z, NewtonResult(False, it, residuals, krylov, f"singular Jacobian: {exc}")
        if isinstance(strategy, ALKrylov):
            krylov.append(kits)
            if not ok:
                return z, NewtonResult(False, it, residuals, krylov,
                                       "linear solver failed to converge")
        if config.line_search:
            step = 1.0
            for _ in range(config.max_backtracks + 1):
                trial = problem.assemble(z + step * dz)
                rt = float(np.linalg.norm(trial[0]))
                if np.isfinite(rt) and rt < r:
                    break
                step *= 0.5
            z = z + step * dz
        else:
            z = z + dz
    return z, NewtonResult(False, config.max_iter, residuals, krylov,
                           "maximum Newton iterations reached")


def secant_predictor(eps, e1, z1, e2, z2):
    """``(eps - e2) / (e2 - e1) (z2 - z1) + z2``."""
    if e2 == e1:
        return np.array(z2, dtype=float)
    return (eps - e2) / (e2 - e1) * (np.asarray(z2) - np.asarray(z1)) + np.asarray(z2)


@dataclass(frozen=True)
class ContinuationSchedule:
    """Ordered parameter targets with a ``"simple"`` or ``"secant"`` predictor."""

    name: str
    values: Sequence[float]
    predictor: str = "simple"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if len(v) == 0:
            raise ValueError("continuation schedule is empty")
        d = np.diff(v)
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("continuation targets must be strictly monotone")
        if self.predictor not in ("simple", "secant"):
            raise ValueError("predictor must be 'simple' or 'secant'")


def continuation_run(make_problem: Callable[[float], Problem], schedule: ContinuationSchedule,
                     z0: np.ndarray | None = None, config: NewtonConfig = NewtonConfig(),
                     strategy=MonolithicDirect(), on_step: Callable | None = None,
                     history: Sequence[tuple[float, np.ndarray]] = ()):
    """Solve along ``schedule``; a failed step aborts and returns partial results.

    ``history`` holds earlier converged ``(param, state)`` pairs that seed the
    secant predictor.  Returns ``(states, report)`` with one converged state
    per completed step.
    """
    report = SolveReport(meta={"parameter": schedule.name, "predictor": schedule.predictor,
                               "strategy": strategy.name})
    states, params = [], []
    prior = list(history)[-2:]
    z = z0 if z0 is not None or not prior else prior[-1][1]
    for value in schedule.values:
        problem = make_problem(value)
        if z is None:
            guess = problem.lift()
        elif schedule.predictor == "secant" and len(prior) + len(states) >= 2:
            (e1, z1), (e2, z2) = (prior + list(zip(params, states)))[-2:]
            guess = secant_predictor(value, e1, z1, e2, z2)
        else:
            guess = states[-1] if states else z
        t0 = time.perf_counter()
        z, res = newton_solve(problem, guess, config, strategy)
        wall = time.perf_counter() - t0
        extra = on_step(problem, z, res) if on_step is not None else {}
        report.add(value, problem.size, res, wall, **(extra or {}))
        if not res.converged:
            break
        states.append(z)
        params.append(value)
    return states, report
