import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from thermoflow.formulation import (BCSet, BinghamChannel, DirichletBC, FieldConfig, Forced,
                                    augment, build_problem)
from thermoflow.mesh import barycentric_refine, generate_rect_mesh
from thermoflow.rheology import BinghamRegularized, Constant, Newtonian
from thermoflow.solver import (ALKrylov, ContinuationSchedule, KrylovConfig, MonolithicDirect,
                               NewtonConfig, SingularMatrixError, build_al_preconditioner,
                               continuation_run, gmres, linear_solve, newton_solve,
                               secant_predictor, sparse_lu)

WALLS = ("left", "right", "top", "bottom")
BARY = barycentric_refine(generate_rect_mesh(2, 2))


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def cavity(form=None, model=None, mesh=BARY):
    bcs = BCSet([DirichletBC("u", WALLS, 0.0), DirichletBC("u", "top", (1.0, 0.0)),
                 DirichletBC("theta", "left", 1.0), DirichletBC("theta", "right", 0.0)])
    return build_problem(mesh, form or BinghamChannel(1.0, 10.0, 0.0, 0.1),
                         model or Newtonian(Constant(1.0)), FieldConfig("three", "sv", 2), bcs,
                         forcing=lambda x, y: (np.sin(3 * y), x * x))


# ------------------------------------------------------------------- direct
def test_lu_identity_and_swap():
    f = sparse_lu(sp.identity(5))
    b = np.arange(5.0)
    assert np.array_equal(f.solve(b), b)
    x = sparse_lu(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])).solve([1.0, 2.0])
    assert np.allclose(x, [2.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("threshold", [0, 64])
def test_lu_spd_residual(threshold):
    rng = np.random.default_rng(3)
    R = rng.standard_normal((50, 50))
    A = sp.csr_matrix(R @ R.T + 50 * np.eye(50))
    b = rng.standard_normal(50)
    x = sparse_lu(A, dense_threshold=threshold).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_lu_singular_and_shape():
    with pytest.raises(SingularMatrixError):
        sparse_lu(sp.csr_matrix(np.ones((3, 3))))
    with pytest.raises(SingularMatrixError):
        sparse_lu(sp.csr_matrix(np.diag([1.0] * 80 + [0.0])))
    with pytest.raises(ValueError):
        sparse_lu(sp.csr_matrix(np.ones((2, 3))))


# ------------------------------------------------------------------- krylov
def test_gmres_identity_one_iteration():
    b = np.arange(1.0, 8.0)
    res = gmres(sp.identity(7), None, b)
    assert res.converged and res.iterations == 1
    assert np.allclose(res.x, b, atol=1e-14)


def test_gmres_laplacian_bound_and_monotone():
    n = 64
    A = laplacian_1d(n)
    b = np.ones(n)
    res = gmres(A, None, b, KrylovConfig(restart=100, rtol=1e-10))
    assert res.converged and res.iterations <= n
    h = np.array(res.residuals)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert np.linalg.norm(A @ res.x - b) <= 1e-9 * np.linalg.norm(b)


def test_gmres_exact_preconditioner_and_restart():
    A = laplacian_1d(40)
    b = np.linspace(0, 1, 40)
    f = sparse_lu(A)
    assert gmres(A, f, b).iterations == 1
    res = gmres(A, None, b, KrylovConfig(restart=25, max_iter=400, rtol=1e-8))
    assert res.converged
    assert np.linalg.norm(A @ res.x - b) <= 1e-7 * np.linalg.norm(b)


def test_gmres_nullspace_projection():
    n = 30
    A = laplacian_1d(n).tolil()
    A[0, 0] = A[-1, -1] = 1.0  # Neumann: constants in the kernel
    A = A.tocsr()
    b = np.sin(np.linspace(0, 2 * np.pi, n))
    b -= b.mean()
    res = gmres(A, None, b, KrylovConfig(rtol=1e-10), nullspace=np.ones(n))
    assert res.converged
    assert abs(res.x.mean()) <= 1e-12
    assert np.linalg.norm(A @ res.x - b) <= 1e-9


@pytest.mark.parametrize("kw", [dict(rtol=0.0), dict(atol=-1.0), dict(restart=0),
                                dict(max_iter=0)])
def test_krylov_config_validation(kw):
    with pytest.raises(ValueError):
        KrylovConfig(**kw)


# ----------------------------------------------------------------------- AL
def _eliminated(problem):
    from thermoflow.formulation import BlockSystem, eliminate
    F, J = problem.assemble(problem.lift())
    dofs, _ = problem.dirichlet()
    A, rhs = eliminate(J.matrix, -F, dofs, -F[dofs])
    return BlockSystem(A, problem.layout), rhs


def test_al_preconditioner_zero_in_zero_out():
    P = cavity()
    sysE, rhs = _eliminated(P)
    _, Mp_inv = P.disc.pressure_mass()
    Ahat, _ = augment(sysE, 1e4, rhs, Mp_inv)
    from thermoflow.formulation import BlockSystem
    K = sp.bmat([[Ahat, sysE.Bt], [sysE.B, sysE.C]], format="csr")
    pc = build_al_preconditioner(BlockSystem(K, P.layout), 1e4, 1.0, Mp_inv)
    assert np.array_equal(pc.apply(np.zeros(P.size)), np.zeros(P.size))
    with pytest.raises(ValueError):
        build_al_preconditioner(BlockSystem(K, P.layout), 1e4, 1.0, None)


def _al_iterations(problem, gamma):
    z = problem.lift()
    F, J = problem.assemble(z)
    dz, its, ok = linear_solve(problem, J, F, ALKrylov(gamma, KrylovConfig(rtol=1e-10)))
    assert ok
    return dz, its


def test_al_iterations_drop_with_gamma():
    P = cavity()
    dz_direct, _, _ = linear_solve(P, P.jacobian(P.lift()), P.residual(P.lift()),
                                   MonolithicDirect())
    dz, its_big = _al_iterations(P, 1e4)
    _, its_small = _al_iterations(P, 0.0)
    assert its_big <= 5
    assert its_small > its_big
    u = P.layout.pressure_slice.start
    assert np.abs(dz[:u] - dz_direct[:u]).max() <= 1e-6


def test_al_and_direct_newton_agree():
    P = cavity()
    za, ra = newton_solve(P, P.lift(), NewtonConfig(1e-10), ALKrylov(1e4))
    zd, rd = newton_solve(P, P.lift(), NewtonConfig(1e-10), MonolithicDirect())
    assert ra.converged and rd.converged
    assert np.abs(za - zd).max() <= 1e-6
    Mp, _ = P.disc.pressure_mass()
    for z in (za, zd):
        assert abs(np.ones(Mp.shape[0]) @ Mp @ z[P.layout.pressure_slice]) <= 1e-10
    assert ra.avg_krylov > 0 and rd.avg_krylov == 0.0


# ------------------------------------------------------------------- newton
def test_newton_converges_quadratically():
    P = cavity(form=BinghamChannel(20.0, 10.0, 0.0, 0.1))
    z, res = newton_solve(P, P.lift(), NewtonConfig(1e-10))
    assert res.converged and res.iterations <= 8
    r = res.residuals
    # last contraction faster than linear
    assert r[-1] <= 1e-2 * r[-2] or r[-1] <= 1e-10
    assert np.linalg.norm(P.residual(z)) <= 1e-9


def test_newton_reports_failure():
    P = cavity(form=BinghamChannel(20.0, 10.0, 0.0, 0.1))
    z, res = newton_solve(P, P.lift(), NewtonConfig(1e-10, max_iter=1))
    assert not res.converged and "maximum" in res.message


def test_line_search_keeps_convergence():
    P = cavity(model=BinghamRegularized(Constant(1.0), Constant(1.0), 1.5, 1e-1))
    z, res = newton_solve(P, P.lift(), NewtonConfig(1e-9, line_search=True))
    assert res.converged
    assert all(b <= a for a, b in zip(res.residuals, res.residuals[1:]))


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(atol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iter=0)


# ------------------------------------------------------------- continuation
def test_secant_predictor():
    z1, z2 = np.array([1.0, 2.0]), np.array([3.0, 5.0])
    assert np.array_equal(secant_predictor(0.5, 1.0, z1, 1.0, z2), z2)
    assert np.allclose(secant_predictor(3.0, 1.0, z1, 2.0, z2), [5.0, 8.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3), st.floats(-5, 5))
def test_secant_exact_on_lines(a, b, de, eps):
    e1, e2 = 0.0, de
    line = lambda e: np.array([a + b * e, b - a * e])  # noqa: E731
    assert np.allclose(secant_predictor(eps, e1, line(e1), e2, line(e2)), line(eps), atol=1e-9)


@pytest.mark.parametrize("vals,pred", [([], "simple"), ([1, 2, 2], "simple"),
                                       ([1, 3, 2], "simple"), ([1, 2], "cubic")])
def test_schedule_validation(vals, pred):
    with pytest.raises(ValueError):
        ContinuationSchedule("Re", vals, pred)


def test_continuation_run_records_steps():
    make = lambda re: cavity(form=BinghamChannel(re, 10.0, 0.0, 0.1))  # noqa: E731
    states, rep = continuation_run(make, ContinuationSchedule("Re", [1.0, 10.0, 20.0], "secant"),
                                   config=NewtonConfig(1e-9))
    assert rep.converged and len(states) == 3
    d = rep.to_dict()
    assert d["meta"]["parameter"] == "Re" and len(d["steps"]) == 3


def test_continuation_stops_on_failure():
    make = lambda re: cavity(form=BinghamChannel(re, 10.0, 0.0, 0.1))  # noqa: E731
    states, rep = continuation_run(make, ContinuationSchedule("Re", [1.0, 50.0]),
                                   config=NewtonConfig(1e-12, max_iter=1))
    assert not rep.converged and len(states) == 0 and len(rep.steps) == 1


def test_forced_problem_with_taylor_hood_direct():
    bcs = BCSet([DirichletBC("u", WALLS, 0.0), DirichletBC("theta", WALLS, 0.0)])
    P = build_problem(generate_rect_mesh(3, 3), Forced(), Newtonian(),
                      FieldConfig("three", "th", 2), bcs, forcing=lambda x, y: (y, -x),
                      heat_source=lambda x, y: 1.0 + 0 * x)
    z, res = newton_solve(P, P.lift(), NewtonConfig(1e-10))
    assert res.converged
    with pytest.raises(ValueError):
        newton_solve(P, P.lift(), NewtonConfig(1e-10), ALKrylov(1e4))
