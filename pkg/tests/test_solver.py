import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mdgice.assembly import Inflow, Outflow
from mdgice.cases import BoundaryLayerConfig, boundary_layer_problem
from mdgice.mesh import GeometryField, build_line_mesh, build_triangulated_grid
from mdgice.physics import AdvectionDiffusion, Burgers
from mdgice.solver import (
    CONVERGED,
    FactorizationError,
    Problem,
    SolverConfig,
    elastic_operator,
    lm_step,
    regularization_diagonal,
    solve_continuation,
    solve_spd,
    solve_stationary,
)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25)
def test_linear_least_squares_in_one_step(seed):
    rng = np.random.default_rng(seed)
    J = rng.standard_normal((12, 5))
    r = rng.standard_normal(12)
    delta = lm_step(sp.csr_matrix(J), r, np.zeros(5))
    expected, *_ = np.linalg.lstsq(J, -r, rcond=None)
    np.testing.assert_allclose(delta, expected, atol=1e-10)


def test_large_geometry_damping_freezes_grid():
    rng = np.random.default_rng(1)
    J = sp.csr_matrix(rng.standard_normal((10, 6)))
    r = rng.standard_normal(10)
    diag = np.zeros(6)
    diag[4:] = 1e14
    delta = lm_step(J, r, diag)
    assert np.abs(delta[4:]).max() < 1e-12
    expected, *_ = np.linalg.lstsq(J.toarray()[:, :4], -r, rcond=None)
    np.testing.assert_allclose(delta[:4], expected, atol=1e-10)


def test_scalar_toy_problem():
    # r(theta) = theta^2 - 4 from theta = 3
    theta = 3.0
    for _ in range(20):
        r = np.array([theta ** 2 - 4.0])
        theta += lm_step(sp.csr_matrix([[2.0 * theta]]), r, np.array([1e-12]))[0]
    assert theta == pytest.approx(2.0, abs=1e-12)


def test_elastic_operator_properties():
    _, geom = build_triangulated_grid(3, 2, degree=2)
    K = elastic_operator(geom, (1.0, 0.5)).toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    eig = np.linalg.eigvalsh(K)
    assert eig.min() > -1e-10 * eig.max()
    X = geom.coords
    rigid = [np.tile([1.0, 0.0], len(X)), np.tile([0.0, 1.0], len(X)),
             np.column_stack([-X[:, 1], X[:, 0]]).ravel()]
    for v in rigid:
        assert np.abs(K @ v).max() < 1e-10
    # exactly three zero modes: translations plus the infinitesimal rotation
    assert np.sum(eig < 1e-9 * eig.max()) == 3


def test_elastic_operator_stiffens_compressed_cells():
    _, geom = build_line_mesh(2, 0.0, 1.0)
    K0 = elastic_operator(geom).toarray()
    X = geom.coords.copy()
    X[1] = 0.1
    K1 = elastic_operator(geom, coords=X).toarray()
    assert K1[0, 0] > 4 * K0[0, 0]


def test_solve_spd_rejects_indefinite():
    with pytest.raises(FactorizationError):
        solve_spd(sp.diags([1.0, -1.0]), np.ones(2))


def test_regularization_scales_with_damping():
    pr = boundary_layer_problem(1, BoundaryLayerConfig())
    cfg = SolverConfig(lambda_y=0.0, lambda_sigma=2.0, lambda_u=3.0)
    d = regularization_diagonal(pr.disc, cfg, 10.0)
    for name, val in (("y", 0.0), ("sigma", 20.0), ("u", 30.0)):
        a, b = pr.disc.col_blocks[name]
        np.testing.assert_array_equal(d[a:b], val)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(lambda_u=0.0)
    with pytest.raises(ValueError):
        SolverConfig(elastic_weight=-1.0)
    SolverConfig(lambda_u=0.0, frozen_geometry=True)


def test_exact_solution_is_a_fixed_point():
    mesh, geom = build_line_mesh(3, 0.0, 1.0)
    pr = Problem(geom, AdvectionDiffusion([1.0], 0.1), 2, bcs={t: Inflow([0.7]) for t in mesh.tags()})
    state = pr.disc.state_from_functions(lambda x: np.full(len(x), 0.7))
    pr2, out, rep = solve_stationary(pr, state, SolverConfig())
    assert rep.status == CONVERGED
    assert rep.iterations == 0
    np.testing.assert_array_equal(out.u, state.u)


def _layer_problem(pe=20.0):
    cfg = BoundaryLayerConfig(pe=pe)
    pr = boundary_layer_problem(2, cfg)
    return pr, pr.disc.state_from_functions(lambda x: x[:, 0])


def test_accepted_steps_decrease_residual():
    pr, state = _layer_problem()
    _, _, rep = solve_stationary(pr, state, SolverConfig(lambda_u=1e-6, elastic_weight=1e-6, max_iter=30))
    r = [rec.residual for rec in rep.records]
    assert np.all(np.diff(r) < 0)
    assert r[-1] < 0.1 * r[0]


def test_frozen_geometry_keeps_grid():
    pr, state = _layer_problem()
    _, out, rep = solve_stationary(pr, state, SolverConfig(frozen_geometry=True, max_iter=20))
    np.testing.assert_array_equal(out.u, pr.geom.coords)
    # linear problem on a fixed grid: Gauss-Newton converges immediately
    assert rep.status == CONVERGED
    assert rep.iterations <= 2


def test_moving_grid_beats_fixed_grid():
    pr, state = _layer_problem(pe=50.0)
    _, fixed, _ = solve_stationary(pr, state, SolverConfig(frozen_geometry=True, max_iter=10))
    _, moved, rep = solve_stationary(pr, fixed, SolverConfig(lambda_u=1e-8, elastic_weight=1e-8, max_iter=200))
    r_fixed = pr.assemble(fixed, jacobian=False).norm
    assert rep.records[-1].residual < 0.5 * r_fixed
    assert np.all(np.diff(np.sort(moved.u[:, 0])) > 0)


def test_continuation_runs_all_stages():
    mesh, geom = build_line_mesh(4, 0.0, 1.0)
    pr = Problem(geom, Burgers(0.2), 1, bcs={"left": Inflow([1.0]), "right": Inflow([-1.0])},
                 tag_constraints={})
    state = pr.disc.state_from_functions(lambda x: 1.0 - 2.0 * x[:, 0])
    models = [Burgers(e) for e in (0.2, 0.1)]
    pr2, out, rep = solve_continuation(pr, state, models, SolverConfig(lambda_u=1e-6, elastic_weight=1e-6,
                                                                        max_iter=40))
    assert pr2.model.eps == 0.1
    assert rep.records[-1].residual < rep.records[0].residual
