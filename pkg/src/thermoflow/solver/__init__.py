"""Linear and nonlinear solvers."""
from .al import ALPreconditioner, build_al_preconditioner
from .linear import (KrylovConfig, KrylovResult, LuFactorization, SingularMatrixError, gmres,
                     lu_solve, sparse_lu)
from .nonlinear import (ALKrylov, ContinuationSchedule, MonolithicDirect, NewtonConfig,
                        NewtonResult, SolveReport, continuation_run, linear_solve, newton_solve,
                        secant_predictor)

__all__ = [
    "ALPreconditioner", "build_al_preconditioner", "KrylovConfig", "KrylovResult",
    "LuFactorization", "SingularMatrixError", "gmres", "lu_solve", "sparse_lu", "ALKrylov",
    "ContinuationSchedule", "MonolithicDirect", "NewtonConfig", "NewtonResult", "SolveReport",
    "continuation_run", "linear_solve", "newton_solve", "secant_predictor",
]
