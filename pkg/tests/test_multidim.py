from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knapsack_lab.demand import MultiDemandDistribution, multi_G
from knapsack_lab.errors import NumericalError, ResourceError, ValidationError
from knapsack_lab.fluid import quadratic_problem
from knapsack_lab.multidim import (
    MultiFluidField,
    ParametricSolutionMulti,
    evaluate_parametric_multi,
    hessian_det_residual,
    multi_enumeration_oracle,
    multi_sde,
    multi_sde_coefficients,
    solve_centers_multi,
    solve_characteristic,
    solve_dp_multi,
    solve_fluid_multi,
)

EMPTY = MultiDemandDistribution.from_atoms(2, [], 1)
CERTAIN = MultiDemandDistribution.from_atoms(2, [(1, (1, 1), 1)])
HALF = MultiDemandDistribution.from_atoms(2, [(1, (1, 1), Fraction(1, 2))])


@st.composite
def multi_distributions(draw):
    k = draw(st.integers(1, 3))
    weights = draw(st.lists(st.integers(1, 20), min_size=k + 1, max_size=k + 1))
    total = sum(weights)
    atoms = [
        (Fraction(draw(st.integers(0, 8)), 2),
         (draw(st.integers(1, 2)), draw(st.integers(1, 2))),
         Fraction(w, total))
        for w in weights[1:]
    ]
    return MultiDemandDistribution.from_atoms(2, atoms, Fraction(weights[0], total))


def test_dp_examples():
    assert not solve_dp_multi(EMPTY, (3, 2), 4).values.any()
    T = 5
    V = solve_dp_multi(CERTAIN, (3, 4), T).values
    for t in range(T + 1):
        for a in range(4):
            for b in range(5):
                assert V[t, a, b] == min(a, b, T - t + 1)


@given(multi_distributions(), st.integers(0, 3), st.integers(0, 3), st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_dp_matches_oracle_and_is_monotone(dist, a, b, T):
    V = solve_dp_multi(dist, (a, b), T).values
    assert abs(V[0, a, b] - multi_enumeration_oracle(dist, (a, b), T)) <= 1e-9
    assert np.all(np.diff(V, axis=1) >= -1e-12)
    assert np.all(np.diff(V, axis=2) >= -1e-12)
    assert np.all(V[:-1] >= V[1:] - 1e-12)
    for i in range(a + 1):
        for j in range(b + 1):
            if all(q[0] > i or q[1] > j for q in dist.quantities):
                assert not V[:, i, j].any()


def test_dp_budget_and_validation():
    with pytest.raises(ResourceError):
        solve_dp_multi(HALF, (500, 500), 400)
    with pytest.raises(ValidationError):
        solve_dp_multi(HALF, (3,), 2)


def test_table_csv(tmp_path):
    solve_dp_multi(HALF, (1, 2), 1).to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "t,d1,d2,value"
    assert len(lines) == 1 + 2 * 2 * 3
    assert lines[-1] == "1,1,2,0.5"


def test_fluid_accept_all_and_terminal():
    dist = MultiDemandDistribution.from_atoms(
        2, [(2, (1, 2), Fraction(1, 4)), (1, (1, 1), Fraction(1, 4))]
    )
    # per-axis grid speed equals the largest quantity, so the region is resolved exactly
    field = solve_fluid_multi(dist, None, (1.0, 1.0, 2.0), (40, 40, 40))
    x0, x1, x2 = np.meshgrid(*field.grids, indexing="ij")
    region = (x1 >= (1 - x0) * 1) & (x2 >= (1 - x0) * 2)
    exact = (1 - x0) * float(multi_G(dist, [0.0, 0.0]))
    assert np.max(np.abs(field.u - exact)[region]) <= 1e-12
    h = lambda a, b: a + 2 * b  # noqa: E731
    field = solve_fluid_multi(dist, h, (1.0, 1.0, 2.0), (40, 40, 40))
    assert np.array_equal(field.u[-1], h(*np.meshgrid(*field.grids[1:], indexing="ij")))


def test_fluid_dimension_cap():
    dist = MultiDemandDistribution.from_atoms(4, [(1, (1, 1, 1, 1), 1)])
    with pytest.raises(ValidationError):
        solve_fluid_multi(dist, None, (1, 1, 1, 1, 1), (4, 4, 4, 4, 4))


def _separable(a=1.0, b=1.0, c=0.5):
    g, h, exact, _ = quadratic_problem(a, b, c, 1.0)
    return (lambda z: g(z[0]) + g(z[1]), lambda y1, y2: h(y1) + h(y2),
            lambda x, y1, y2: exact(x, y1) + exact(x, y2))


def test_smooth_refinement():
    G, h, exact = _separable()
    pde, det, err = [], [], []
    for n in (10, 20, 40):
        field = solve_fluid_multi(G, h, (1.0, 1.0, 1.0), (4 * n, n, n), boundary=exact)
        u0, u1, u2 = field.gradient
        pde.append(np.abs(u0 + G(np.stack([u1, u2])))[1:-1, 1:-1, 1:-1].max())
        det.append(hessian_det_residual(field))
        err.append(np.abs(field.u - exact(*np.meshgrid(*field.grids, indexing="ij"))).max())
    assert pde[0] > pde[1] > pde[2]
    assert det[0] > det[1] > det[2]
    assert err[0] > err[1] > err[2]


def test_hessian_residual_examples():
    grids = tuple(np.linspace(0, 1, 9) for _ in range(3))
    mesh = np.meshgrid(*grids, indexing="ij")
    zero = tuple(np.zeros_like(mesh[0]) for _ in range(3))
    affine = MultiFluidField(grids, 2 * mesh[0] - mesh[1] + 0.5 * mesh[2], zero)
    assert hessian_det_residual(affine) == 0.0
    grids2 = grids[:2]
    x0, _ = np.meshgrid(*grids2, indexing="ij")
    assert hessian_det_residual(MultiFluidField(grids2, x0**2, zero[:2])) == 0.0


def test_binary_round_trip(tmp_path):
    field = solve_fluid_multi(HALF, None, (1.0, 1.0, 1.0), (10, 5, 5))
    field.to_binary(tmp_path / "m.bin")
    back = MultiFluidField.from_binary(tmp_path / "m.bin")
    assert np.array_equal(back.u, field.u)
    assert all(np.array_equal(a, b) for a, b in zip(back.gradient, field.gradient))
    assert all(np.array_equal(a, b) for a, b in zip(back.grids, field.grids))


A = np.array([[2.0, 0.5], [0.5, 1.0]])
B = np.array([1.0, 0.5])


def _quadratic_R(L, dL):
    return ParametricSolutionMulti(
        lambda xi: 0.5 * xi @ A @ xi + B @ xi, lambda xi: A @ xi + B, lambda xi: A, L, dL
    )


def test_parametric_linear_L_one_newton_step():
    c = np.array([0.2, -0.1])
    sol = _quadratic_R(lambda xi: c @ xi, lambda xi: c)
    xi = solve_characteristic(sol, [1.0, 0.3, 0.2], max_iter=1)
    M = np.linalg.solve(A, c)
    assert np.allclose(xi, np.array([0.3, 0.2]) - M, atol=1e-13)


def test_parametric_xi_zero():
    c = np.array([0.2, -0.1])
    sol = _quadratic_R(lambda xi: c @ xi, lambda xi: c)
    point = np.concatenate([[0.7], np.linalg.solve(A, c)])
    _, grad = evaluate_parametric_multi(sol, point)
    assert np.allclose(grad[1:], B, atol=1e-12)


def test_parametric_pde_residual():
    sol = _quadratic_R(lambda xi: 0.1 * np.sum(xi**3) + 0.05 * xi[0] * xi[1],
                       lambda xi: 0.3 * xi**2 + 0.05 * xi[::-1])
    Ainv = np.linalg.inv(A)
    G = lambda p: 0.5 * (p - B) @ Ainv @ (p - B)  # noqa: E731
    gen = np.random.default_rng(3)
    for _ in range(30):
        point = gen.uniform([0.5, -0.3, -0.3], [1.5, 0.3, 0.3])
        u, grad = evaluate_parametric_multi(sol, point)
        assert abs(grad[0] + G(grad[1:])) <= 1e-8
        h = 1e-5
        for k in range(3):
            e = np.eye(3)[k] * h
            fd = (evaluate_parametric_multi(sol, point + e)[0]
                  - evaluate_parametric_multi(sol, point - e)[0]) / (2 * h)
            assert fd == pytest.approx(grad[k], abs=1e-7)


def test_parametric_singular_hessian():
    sol = ParametricSolutionMulti(lambda xi: 0.0, lambda xi: np.zeros(2),
                                  lambda xi: np.zeros((2, 2)), lambda xi: 0.0,
                                  lambda xi: np.zeros(2))
    with pytest.raises(NumericalError):
        evaluate_parametric_multi(sol, [1.0, 0.0, 0.0])


def test_sde_zero_coefficients():
    sde = multi_sde(None, np.zeros((65, 2)), (0.0, 1.0), 1 / 64, 10, seed=1)
    assert not sde.Y.any()


def test_sde_accept_all_half():
    field = solve_fluid_multi(HALF, None, (1.0, 2.0, 2.0), (80, 80, 80))
    centers = solve_centers_multi(field, HALF, [2.0, 2.0])
    assert np.allclose(centers.values[-1], [0.5, 0.5], atol=1e-9)
    coef, clamped = multi_sde_coefficients(field, HALF, centers)
    assert not clamped
    sde = multi_sde(centers, coef, (0.0, 1.0), centers.dt, 10_000, seed=4, record_every=64)
    var = sde.at(1.0).var(axis=0, ddof=1)
    assert np.allclose(var, 0.25, rtol=0.10)
    # symmetric instance: exchangeable components
    width = 2 * 1.96 * 0.25 * np.sqrt(2 / (sde.n_paths - 1))
    assert abs(var[0] - var[1]) < 2 * width


def test_sde_verbatim_clamp():
    rich = MultiDemandDistribution.from_atoms(2, [(4, (1, 1), Fraction(1, 2))])
    field = solve_fluid_multi(rich, None, (1.0, 2.0, 2.0), (80, 40, 40))
    centers = solve_centers_multi(field, rich, [2.0, 2.0], mode="verbatim-g")
    with pytest.warns(RuntimeWarning):
        coef, clamped = multi_sde_coefficients(field, rich, centers)
    assert clamped and coef.max() <= 1.0
    with pytest.warns(RuntimeWarning):
        sde = multi_sde(None, lambda t: np.array([1.5, 0.5]), (0.0, 1.0), 0.25, 5, seed=0)
    assert sde.metadata["clamped"]
