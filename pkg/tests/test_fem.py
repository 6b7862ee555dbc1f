from math import factorial

import numpy as np
import pytest
import scipy.sparse.linalg as spla
import sympy as sy
from hypothesis import given, settings, strategies as st

from thermoflow.fem import (CG, DG, FieldLayout, FunctionSpace, apply_dirichlet, assemble,
                            divergence_matrix, error_norm, mass_matrix, quadrature_rule,
                            reference_basis, stiffness_matrix, tabulate, write_matrix_market)
from thermoflow.fem.assembly import mass_kernel
from thermoflow.mesh import Mesh, barycentric_refine, generate_rect_mesh, uniform_refine

WALLS = ["left", "right", "top", "bottom"]


def monomial_integral(a, b):
    # int_T x^a y^b over the reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def single_triangle(scale=1.0):
    return Mesh(scale * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                np.array([[0, 1], [1, 2], [2, 0]]), np.array(["bottom", "right", "left"]))


# ------------------------------------------------------------------ quadrature
def test_quadrature_unit_and_bubble():
    q = quadrature_rule(3)
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    bubble = np.prod(q.points, axis=1) @ q.weights
    assert bubble == pytest.approx(1 / 120, abs=1e-15)


@pytest.mark.parametrize("bad", [0, 21, -3])
def test_quadrature_rejects_degree(bad):
    with pytest.raises(ValueError):
        quadrature_rule(bad)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.data())
def test_quadrature_exactness(degree, data):
    a = data.draw(st.integers(0, degree))
    b = data.draw(st.integers(0, degree - a))
    q = quadrature_rule(degree)
    assert np.all(q.weights > 0)
    x, y = q.xi.T
    assert (x ** a * y ** b) @ q.weights == pytest.approx(monomial_integral(a, b), rel=1e-13)


def test_cross_rule_gradient_products():
    m = uniform_refine(generate_rect_mesh(2, 2))
    for k in (1, 2, 3):
        V = FunctionSpace(m, CG(k))
        from thermoflow.fem.assembly import stiffness_kernel
        A = assemble(V, V, stiffness_kernel, degree=2 * k + 2).toarray()
        B = assemble(V, V, stiffness_kernel, degree=2 * k + 4).toarray()
        assert np.abs(A - B).max() <= 1e-13 * max(1.0, np.abs(A).max())


# --------------------------------------------------------------------- basis
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_partition_of_unity(k):
    xi = quadrature_rule(8).xi
    phi, dphi = reference_basis(k, xi)
    assert np.allclose(phi.sum(1), 1.0, atol=1e-14)
    assert np.allclose(dphi.sum(1), 0.0, atol=1e-12)


def test_p1_nodal_identity():
    phi, _ = reference_basis(1, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(phi, np.eye(3), atol=1e-15)


def test_vector_tabulation_is_componentwise():
    val, grad = tabulate(CG(2, "vector"), np.array([[0.2, 0.3]]))
    assert val.shape == (2, 1, 12) and grad.shape == (2, 1, 12, 2)
    assert np.allclose(val[0, :, 6:], 0) and np.allclose(val[1, :, :6], 0)


def test_element_validation():
    with pytest.raises(ValueError):
        CG(0)
    with pytest.raises(ValueError):
        DG(1, "matrix")
    assert DG(1, "traceless").ncomp == 2
    assert DG(1, "symmetric").ncomp == 3


# ------------------------------------------------------------------ assembly
def test_p1_mass_matrix_symbolic():
    x, y = sy.symbols("x y")
    basis = [1 - x - y, x, y]
    exact = np.array([[float(sy.integrate(sy.integrate(p * q, (y, 0, 1 - x)), (x, 0, 1)))
                       for q in basis] for p in basis])
    M = mass_matrix(FunctionSpace(single_triangle(), CG(1))).toarray()
    assert np.allclose(M, exact, atol=1e-15)
    assert np.allclose(M, (0.5 / 12) * (np.ones((3, 3)) + np.eye(3)), atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_stiffness_rows_and_symmetry(k):
    V = FunctionSpace(uniform_refine(generate_rect_mesh(3, 2)), CG(k))
    K = stiffness_matrix(V)
    assert np.abs(K.sum(1)).max() <= 1e-12
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    M = mass_matrix(V)
    assert abs(M - M.T).max() <= 1e-12 * abs(M).max()
    assert M.sum() == pytest.approx(1.0, abs=1e-12)


def test_csr_sorted_without_duplicates():
    K = stiffness_matrix(FunctionSpace(generate_rect_mesh(3, 3), CG(2)))
    assert K.has_sorted_indices and K.has_canonical_format


@pytest.mark.parametrize("k", [2, 3])
def test_divergence_of_constant_field(k):
    m = barycentric_refine(generate_rect_mesh(2, 2))
    W, Q = FunctionSpace(m, CG(k, "vector")), FunctionSpace(m, DG(k - 1))
    B = divergence_matrix(Q, W)
    assert np.abs(B @ W.interpolate(lambda x, y: [1 + 0 * x, -2 + 0 * x])).max() <= 1e-13


def test_space_mismatch_rejected():
    V1 = FunctionSpace(generate_rect_mesh(1, 1), CG(1))
    V2 = FunctionSpace(generate_rect_mesh(1, 1), CG(1))
    with pytest.raises(ValueError):
        assemble(V1, V2, mass_kernel)


def test_facet_kernel_jump_penalty():
    V = FunctionSpace(uniform_refine(generate_rect_mesh(3, 3)), CG(2))

    def kernel(f):
        g = [np.einsum("cfqid,fd->fqi", f.test[s].dphi, f.normal) for s in (0, 1)]
        j = np.concatenate([g[0], -g[1]], axis=-1)
        return np.einsum("fq,fqi,fqj->fij", f.w, j, j)

    J = assemble(V, V, facet_kernel=kernel)
    smooth = V.interpolate(lambda x, y: x * x + 3 * x * y - y * y)
    kink = V.interpolate(lambda x, y: np.abs(x - 0.5))
    assert abs(smooth @ J @ smooth) <= 1e-10
    assert kink @ J @ kink > 1e-3


def test_continuous_and_discontinuous_numbering():
    m = generate_rect_mesh(2, 2)
    for k in (1, 2, 3):
        V = FunctionSpace(m, CG(k))
        assert np.array_equal(np.unique(V.cell_dofs), np.arange(V.ndof))
        assert V.ndof < m.num_cells * V.nloc
    W = FunctionSpace(m, DG(1))
    assert W.ndof == m.num_cells * 3
    assert len(np.unique(W.cell_dofs)) == W.cell_dofs.size


def test_field_layout():
    m = generate_rect_mesh(2, 2)
    V, Q = FunctionSpace(m, CG(2, "vector")), FunctionSpace(m, CG(1))
    L = FieldLayout([("u", V), ("p", Q)])
    assert L.size == V.ndof + Q.ndof
    assert L.slice("p") == slice(V.ndof, V.ndof + Q.ndof)
    z = np.arange(L.size, dtype=float)
    assert np.array_equal(L.join(L.split(z)), z)
    with pytest.raises(ValueError):
        FieldLayout([("u", V)])
    with pytest.raises(ValueError):
        FieldLayout([("p", Q), ("p", Q)])


# ----------------------------------------------------------------- dirichlet
def test_zero_dirichlet_rows():
    V = FunctionSpace(generate_rect_mesh(3, 3), CG(1))
    K = stiffness_matrix(V)
    A, b, dofs, vals = apply_dirichlet(K, np.ones(V.ndof), V, WALLS, 0.0)
    A = A.toarray()
    assert np.allclose(A[dofs][:, dofs], np.eye(len(dofs)))
    assert np.allclose(np.delete(A[dofs], dofs, axis=1), 0)
    assert np.allclose(b[dofs], 0)
    assert np.allclose(A, A.T)


@pytest.mark.parametrize("k", [1, 2])
def test_harmonic_lift_reproduces_linear(k):
    V = FunctionSpace(uniform_refine(generate_rect_mesh(3, 3)), CG(k))
    A, b, _, _ = apply_dirichlet(stiffness_matrix(V), np.zeros(V.ndof), V, WALLS,
                                 lambda x, y: x)
    th = spla.spsolve(A.tocsc(), b)
    assert np.abs(th - V.node_coords[:, 0]).max() <= 1e-10


def test_unknown_marker_rejected():
    V = FunctionSpace(generate_rect_mesh(2, 2), CG(1))
    with pytest.raises(ValueError):
        apply_dirichlet(stiffness_matrix(V), np.zeros(V.ndof), V, "inlet", 0.0)


# --------------------------------------------------------------------- norms
@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_error_vanishes(k):
    V = FunctionSpace(generate_rect_mesh(3, 2), CG(k))
    f = lambda x, y: x ** k - 2 * x * y ** (k - 1) + 1  # noqa: E731
    assert error_norm(V, V.interpolate(f), f) <= 1e-12


def test_norm_examples():
    V = FunctionSpace(generate_rect_mesh(4, 4), CG(1))
    assert error_norm(V, np.ones(V.ndof), None, 2) == pytest.approx(1.0, abs=1e-13)
    lr = error_norm(V, V.interpolate(lambda x, y: x), None, 3.5, degree=20)
    assert lr == pytest.approx((1 / 4.5) ** (1 / 3.5), rel=1e-6)
    h1 = error_norm(V, V.interpolate(lambda x, y: x + 2 * y), None, "H1")
    assert h1 == pytest.approx(np.sqrt(5.0), rel=1e-12)
    with pytest.raises(ValueError):
        error_norm(V, np.ones(V.ndof), None, 0.5)


def test_matrix_market_dump(tmp_path):
    import scipy.io
    K = stiffness_matrix(FunctionSpace(generate_rect_mesh(2, 2), CG(1)))
    p = write_matrix_market(tmp_path / "k.mtx", K)
    assert abs(scipy.io.mmread(str(p)) - K).max() <= 1e-15
