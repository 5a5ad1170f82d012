import math

import numpy as np
import pytest

import mirnn.expr as E
from mirnn import physics as ph
from mirnn.errors import ConfigError, DomainError


def test_burgers_exact_zeros_of_sine():
    b = ph.burgers_problem()
    assert b.exact({"x": 1.0, "t": 5.0})["u"] == pytest.approx(0.0, abs=1e-15)
    assert b.exact({"x": 4.0, "t": 2.0})["u"] == pytest.approx(0.0, abs=1e-12)


def test_burgers_exact_midpoint_value():
    # at x=0.5, t=5 the decay factor is 1 and cos(pi/2)=0: u = 2*mu*pi/2
    b = ph.burgers_problem()
    assert b.exact({"x": 0.5, "t": 5.0})["u"] == pytest.approx(0.01 * math.pi)


def test_exact_graph_matches_numpy_exact():
    rng = np.random.default_rng(0)
    for prob in (ph.burgers_problem(), ph.heat_problem(),
                 ph.taylor_green_problem(0.1)):
        pts = ph.sample_points(prob.domain, 200, "interior",
                               prob.time_interval(), rng)
        coord_exprs = {c: E.inp(c) for c in prob.coords}
        graph_fields = prob.exact_graph(coord_exprs)
        bindings = {c: np.asarray(pts[c])[:, None] for c in prob.coords}
        values = E.Program(tuple(graph_fields[f] for f in prob.fields)).run(
            bindings, {})
        exact = prob.exact(pts)
        for f, v in zip(prob.fields, values):
            assert np.allclose(v.ravel(), exact[f], atol=1e-12)


def test_residual_of_exact_burgers():
    assert ph.exact_residual_max(ph.burgers_problem(), 1000, seed=1) <= 1e-8


def test_residual_of_exact_heat():
    assert ph.exact_residual_max(ph.heat_problem(), 1000, seed=2) <= 1e-8


@pytest.mark.parametrize("nu", [0.01, 0.1, 1.0])
def test_residual_of_exact_taylor_green(nu):
    assert ph.exact_residual_max(ph.taylor_green_problem(nu), 1000, seed=3) <= 1e-8


def test_heat_constant_field_has_zero_residual():
    prob = ph.heat_problem()
    coord_exprs = {c: E.inp(c) for c in prob.coords}
    const_field = {"u": E.add(E.const(3.7), E.scale(coord_exprs["x"], 0.0))}
    bundle = {"u": E.FieldDerivatives(value=const_field["u"], coords=prob.coords)}
    res = prob.residuals(bundle)["pde"]
    val = E.eval_expr(res, {c: np.ones((5, 1)) for c in prob.coords})
    assert np.allclose(val, 0.0)


def test_burgers_linear_in_x_residual_is_x():
    # u = x: du/dt = 0, u*du/dx = x, d2u/dx2 = 0, so r = x exactly
    prob = ph.burgers_problem()
    coord_exprs = {c: E.inp(c) for c in prob.coords}
    bundle = {"u": E.FieldDerivatives(value=coord_exprs["x"], coords=prob.coords)}
    res = prob.residuals(bundle)["pde"]
    xs = np.array([[0.3], [1.7], [3.9]])
    val = E.eval_expr(res, {"x": xs, "t": np.zeros((3, 1))})
    assert np.allclose(val, xs)


def test_taylor_green_continuity_cancels_for_reference():
    prob = ph.taylor_green_problem(0.05)
    coord_exprs = {c: E.inp(c) for c in prob.coords}
    fields = prob.exact_graph(coord_exprs)
    bundles = {f: E.FieldDerivatives(value=fields[f], coords=prob.coords)
               for f in prob.fields}
    res = prob.residuals(bundles)["continuity"]
    rng = np.random.default_rng(5)
    bindings = {c: rng.uniform(0.2, 2.0, size=(50, 1)) for c in prob.coords}
    assert np.max(np.abs(E.eval_expr(res, bindings))) <= 1e-12


def test_taylor_green_rejects_bad_constants():
    with pytest.raises(ConfigError):
        ph.taylor_green_problem(0.0)
    with pytest.raises(ConfigError):
        ph.taylor_green_problem(-1.0)
    with pytest.raises(ConfigError):
        ph.burgers_problem(mu=0.0)


def test_sample_points_interior_burgers():
    prob = ph.burgers_problem()
    rng = np.random.default_rng(1)
    pts = ph.sample_points(prob.domain, 100, "interior", (0.0, 5.0), rng)
    assert pts["x"].shape == (100,)
    assert np.all(prob.domain.contains(pts))
    assert np.all((pts["t"] >= 0) & (pts["t"] <= 5))


def test_sample_points_boundary_1d_endpoints_only():
    prob = ph.burgers_problem()
    rng = np.random.default_rng(1)
    pts = ph.sample_points(prob.domain, 64, "boundary", (0.0, 5.0), rng)
    assert set(np.unique(pts["x"])) <= {0.0, 4.0}


def test_sample_points_initial_slice():
    prob = ph.burgers_problem()
    rng = np.random.default_rng(1)
    pts = ph.sample_points(prob.domain, 32, "initial", (0.0, 5.0), rng)
    assert np.all(pts["t"] == 0.0)


def test_sampling_deterministic_per_seed():
    prob = ph.heat_problem()
    a = ph.sample_points(prob.domain, 50, "interior", (0.0, 0.5),
                         np.random.default_rng(9))
    b = ph.sample_points(prob.domain, 50, "interior", (0.0, 0.5),
                         np.random.default_rng(9))
    assert all(np.array_equal(a[c], b[c]) for c in a)


def test_star_domain_boundary_on_curve():
    dom = ph.StarDomain2D()
    rng = np.random.default_rng(3)
    pts = dom.sample_boundary(500, rng)
    assert np.max(dom.boundary_gap(pts)) <= 1e-10


def test_star_domain_interior_inside():
    dom = ph.StarDomain2D()
    rng = np.random.default_rng(4)
    pts = dom.sample_interior(500, rng)
    assert np.all(dom.contains(pts))
    box = dom.bounding_box()
    assert box["x"][0] > 0 and box["x"][1] < math.pi


def test_degenerate_domain_rejection_guard():
    class NoInterior(ph.StarDomain2D):
        def contains(self, pts):
            return np.zeros(np.asarray(pts["x"]).shape, dtype=bool)

    with pytest.raises(DomainError):
        NoInterior().sample_interior(100, np.random.default_rng(0))


def test_square_periodic_pairs_match_edges():
    dom = ph.Square2D(0.0, 2 * math.pi)
    a, b = dom.sample_periodic_pairs(64, np.random.default_rng(2))
    # each pair differs in exactly one coordinate by the full period
    dx = np.abs(a["x"] - b["x"])
    dy = np.abs(a["y"] - b["y"])
    period = 2 * math.pi
    assert np.all((np.isclose(dx, period) & (dy == 0)) |
                  (np.isclose(dy, period) & (dx == 0)))


def test_problem_by_name_dispatch():
    assert ph.problem_by_name("burgers").name == "burgers"
    assert ph.problem_by_name("taylor_green", {"nu": 0.1}).constants["nu"] == 0.1
    with pytest.raises(ConfigError):
        ph.problem_by_name("wave")
