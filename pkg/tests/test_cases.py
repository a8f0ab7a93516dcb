import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdgice.app import _burgers_config
from mdgice.assembly import Inflow, Outflow
from mdgice.cases import (
    BoundaryLayerConfig,
    BurgersConfig,
    ShockConfig,
    facet_jumps,
    kink_trajectory,
    loglog_slope,
    projection_error,
    scaled_regularization,
    shock_end_states,
)
from mdgice.config import TEMPLATES, parse_config
from mdgice.mesh import build_triangulated_grid
from mdgice.oracles import normal_shock
from mdgice.physics import Burgers
from mdgice.solver import Problem, SolverConfig


def test_projection_slope_over_eight_degrees():
    cfg = BoundaryLayerConfig()
    errs = [projection_error(p, cfg) for p in range(1, 9)]
    assert np.all(np.diff(errs) < 0)
    s = loglog_slope([cfg.n_cells * (p + 1) for p in range(1, 9)], errs)
    assert 3.0 <= s <= 4.0


@given(st.floats(1e-6, 1.0))
@settings(max_examples=20, deadline=None)
def test_scaled_regularization(scale):
    base = SolverConfig(lambda_y=1e-4, lambda_sigma=2e-4, lambda_u=3e-4, elastic_weight=4e-4, tol=1e-9)
    sc = scaled_regularization(base, scale, 7)
    got = [sc.lambda_y, sc.lambda_sigma, sc.lambda_u, sc.elastic_weight]
    np.testing.assert_allclose(got, scale * np.array([1e-4, 2e-4, 3e-4, 4e-4]))
    assert sc.max_iter == 7 and sc.tol == base.tol


def test_burgers_phases_from_config():
    bc = _burgers_config(TEMPLATES["burgers"])
    assert bc.relax == BurgersConfig().relax
    cfg = parse_config('case = "burgers"\n[params]\nrelax = [[1.0, 5], [0.1, 3]]\n')
    assert _burgers_config(cfg).relax == ((1.0, 5), (0.1, 3))
    bad = parse_config('case = "burgers"\n[params]\nrelax = [1.0, 5]\n')
    with pytest.raises(ValueError, match="relax"):
        _burgers_config(bad)


def test_shock_end_states_satisfy_normal_shock():
    cfg = ShockConfig()
    up, down = shock_end_states(cfg)
    assert down[0] / up[0] == pytest.approx(normal_shock(cfg.mach)["rho"], rel=1e-12)
    assert up[1] == pytest.approx(down[1], rel=1e-12)  # mass flux


def _kinked_problem(x0=0.1, speed=0.2):
    """Grid whose third vertex column follows x = x0 + speed t; y has a slope jump there."""
    mesh, geom = build_triangulated_grid(10, 10, (0.0, 1.0, 0.0, 1.0), spacetime=True)
    X = geom.coords.copy()
    s = x0 + speed * X[:, 1]
    left = X[:, 0] <= 0.2 + 1e-12
    X[:, 0] = np.where(left, X[:, 0] / 0.2 * s, s + (X[:, 0] - 0.2) / 0.8 * (1.0 - s))
    problem = Problem(geom.with_coords(X), Burgers(0.0, spacetime=True), 1,
                      bcs={t: Outflow() for t in mesh.tags()})
    state = problem.disc.state_from_functions(
        lambda x: 0.2 + 2.0 * np.maximum(0.0, x[:, 0] - (x0 + speed * x[:, 1])))
    return problem, state


def test_facet_jumps_find_the_kink():
    problem, state = _kinked_problem()
    rows = facet_jumps(problem, state)
    assert max(r[3] for r in rows) < 1e-10
    strong = [r for r in rows if r[4] > 1.0]
    assert len(strong) == 10
    for r in strong:
        assert r[0][0] == pytest.approx(0.1 + 0.2 * r[0][1], abs=1e-12)


@pytest.mark.parametrize("speed", [0.0, 0.2, 0.35])
def test_kink_trajectory_recovers_speed(speed):
    problem, state = _kinked_problem(0.1, speed)
    b, a, n = kink_trajectory(problem, state)
    assert b == pytest.approx(speed, abs=1e-10)
    assert a == pytest.approx(0.1, abs=1e-10)
    assert n == 10


def test_kink_trajectory_needs_a_kink():
    problem, _ = _kinked_problem()
    flat = problem.disc.state_from_functions(lambda x: 0.2 + 0 * x[:, 0])
    with pytest.raises(ValueError):
        kink_trajectory(problem, flat, keep=1.1)
