import numpy as np
import pytest

from gibbslab.core import CallableInteraction, ModelSpec, g_array
from gibbslab.equilibrium import find_beta_c, find_beta_s, find_equilibria
from gibbslab.path_coupling import (
    aggregate_variation_closed_form,
    aggregate_variation_quadrature,
    build_monotone_path,
    check_condition_contraction,
    check_condition_local,
    check_condition_riemann,
    critical_times,
    line_derivative,
    riemann_ratio,
    variation_ratio,
)


def riemann_oracle(model, za, zb, m=20000):
    # plain midpoint sum of |d/dt g_k| along the segment
    t = (np.arange(m) + 0.5) / m
    return np.abs(line_derivative(model, za, zb, t)).sum() / m


class TestPaths:
    def test_steps_and_monotone(self):
        za = np.array([1 / 3, 1 / 3, 1 / 3])
        zb = np.array([0.7, 0.2, 0.1])
        path = build_monotone_path(za, zb, 0.05)
        assert np.allclose(path.points[0], za) and np.allclose(path.points[-1], zb)
        assert path.is_monotone()
        steps = path.steps
        assert np.all(steps >= 0.05 - 1e-12) and np.all(steps < 0.1)
        assert steps.sum() == pytest.approx(np.abs(zb - za).sum())

    def test_short_segment(self):
        path = build_monotone_path([0.5, 0.5], [0.51, 0.49], 0.1)
        assert len(path) == 2

    def test_errors(self):
        with pytest.raises(ValueError):
            build_monotone_path([0.5, 0.5], [0.5, 0.5], 0.1)
        assert len(build_monotone_path([0.5, 0.5], [0.5, 0.5], 0.1, allow_empty=True)) == 1
        with pytest.raises(ValueError):
            build_monotone_path([0.5, 0.5], [0.6, 0.4], 0.0)


class TestVariation:
    @pytest.mark.parametrize("q,r,beta", [(2, 2, 1.5), (3, 2, 2.5), (3, 3, 3.0), (4, 2.5, 3.0)])
    def test_closed_form_matches_quadrature_and_riemann(self, q, r, beta):
        model = ModelSpec.gcwp(q, r, beta)
        rng = np.random.default_rng(q)
        u = np.full(q, 1 / q)
        for _ in range(5):
            z = rng.dirichlet(np.ones(q))
            cf = aggregate_variation_closed_form(model, z)
            assert cf == pytest.approx(aggregate_variation_quadrature(model, u, z), abs=1e-9)
            assert cf == pytest.approx(riemann_oracle(model, u, z), rel=1e-5, abs=1e-9)

    def test_dominates_endpoint_difference(self):
        model = ModelSpec.gcwp(3, 2, 2.0)
        za = np.array([0.5, 0.3, 0.2])
        zb = np.array([0.1, 0.1, 0.8])
        d = aggregate_variation_quadrature(model, za, zb)
        assert d >= np.abs(g_array(model, zb) - g_array(model, za)).sum() - 1e-12

    def test_beta_zero(self):
        model = ModelSpec.gcwp(3, 2, 0.0)
        assert aggregate_variation_quadrature(model, [1, 0, 0], [0, 1, 0]) == 0.0
        assert aggregate_variation_closed_form(model, [1, 0, 0]) == 0.0

    def test_critical_times_are_stationary_points(self):
        model = ModelSpec.gcwp(3, 2, 2.5)
        z = np.array([0.8, 0.15, 0.05])
        t = critical_times(model, z)
        u = np.full(3, 1 / 3)
        for k in np.flatnonzero(z > 1 / 3):
            if t[k] < 1:
                assert abs(line_derivative(model, u, z, [t[k]])[0, k]) < 1e-9
        # coordinates below 1/q have no critical time
        assert t[1] == 1.0 and t[2] == 1.0

    def test_closed_form_needs_gcwp(self):
        h = CallableInteraction(lambda t: -t**2 / 2, lambda t: -t, lambda t: -np.ones_like(t))
        with pytest.raises(ValueError):
            aggregate_variation_closed_form(ModelSpec(3, 1.0, h), [0.5, 0.3, 0.2])

    def test_custom_interaction_quadrature_agrees(self):
        h = CallableInteraction(lambda t: -t**2 / 2, lambda t: -t, lambda t: -np.ones_like(t))
        custom = ModelSpec(3, 2.0, h)
        power = ModelSpec.gcwp(3, 2, 2.0)
        z = np.array([0.6, 0.3, 0.1])
        u = np.full(3, 1 / 3)
        assert variation_ratio(custom, z, u) == pytest.approx(variation_ratio(power, z, u), abs=1e-9)


class TestConditions:
    def test_contraction_holds_below_threshold(self):
        model = ModelSpec.gcwp(3, 2, 0.9 * find_beta_s(3, 2))
        rep = check_condition_contraction(model, 60)
        assert rep.holds and rep.sup_ratio < 1
        d = rep.to_dict()
        assert d["condition"] == "contraction" and d["grid_resolution"] == 60

    def test_contraction_fails_in_gap(self):
        bs, bc = find_beta_s(3, 2), find_beta_c(3, 2)
        rep = check_condition_contraction(ModelSpec.gcwp(3, 2, 0.5 * (bs + bc)), 60)
        assert not rep.holds

    def test_riemann_approaches_contraction(self):
        model = ModelSpec.gcwp(3, 2, 2.0)
        u = np.full(3, 1 / 3)
        z = np.array([0.7, 0.2, 0.1])
        exact = variation_ratio(model, z, u)
        errs = [abs(riemann_ratio(model, z, u, eps) - exact) for eps in (0.04, 0.02, 0.01)]
        assert errs[2] < errs[0]
        assert check_condition_riemann(model, 0.02, 40).holds

    def test_local_matches_analytic(self):
        q, r, beta = 3, 2.5, 2.0
        rep = check_condition_local(ModelSpec.gcwp(q, r, beta))
        assert rep.sup_ratio == pytest.approx(beta * (r - 1) / q ** (r - 1), abs=1e-4)
        assert rep.extra["jacobian_norm"] == pytest.approx(rep.extra["analytic"], abs=1e-9)

    def test_local_at_asymmetric_equilibrium(self):
        q, r = 3, 2
        beta = 1.5 * find_beta_c(q, r)
        model = ModelSpec.gcwp(q, r, beta)
        eq = find_equilibria(model)
        eq = type(eq)(eq.z_beta, eq.u, eq.min_value, "unique", eq.grid_value)
        rep = check_condition_local(model, equilibrium=eq)
        assert rep.sup_ratio == pytest.approx(rep.extra["jacobian_norm"], rel=1e-3)

    def test_requires_unique_equilibrium(self):
        model = ModelSpec.gcwp(3, 2, 4.0)
        with pytest.raises(ValueError):
            check_condition_contraction(model, 30)


class TestSegmentClaims:
    def _random_cases(self, count=100, seed=0):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            q = int(rng.integers(2, 5))
            r = float(rng.uniform(2, 4))
            beta = float(rng.uniform(0.05, 0.99)) * find_beta_s(q, r)
            yield ModelSpec.gcwp(q, r, beta), rng.dirichlet(np.ones(q))

    def test_low_coordinates_decrease(self):
        t = np.linspace(0, 1, 1001)
        for model, z in self._random_cases():
            u = np.full(model.q, 1 / model.q)
            g = g_array(model, u[None, :] + t[:, None] * (z - u)[None, :])
            for k in np.flatnonzero(z <= 1 / model.q):
                assert np.all(np.diff(g[:, k]) <= 1e-14)

    def test_high_coordinates_one_critical_point(self):
        t = np.linspace(0, 1, 1001)[1:-1]
        for model, z in self._random_cases(seed=1):
            u = np.full(model.q, 1 / model.q)
            der = line_derivative(model, u, z, t)
            for k in np.flatnonzero(z > 1 / model.q):
                signs = np.sign(der[:, k][np.abs(der[:, k]) > 1e-13])
                assert np.count_nonzero(np.diff(signs)) <= 1

    def test_weighted_inner_product_increases(self):
        t = np.linspace(0, 1, 1001)
        for model, z in self._random_cases(seed=2):
            u = np.full(model.q, 1 / model.q)
            g = g_array(model, u[None, :] + t[:, None] * (z - u)[None, :])
            inner = g @ (z - u) / model.q
            assert np.all(np.diff(inner) >= -1e-15)

    def test_derivative_matches_finite_differences(self):
        h = 1e-6
        for model, z in self._random_cases(count=20, seed=3):
            u = np.full(model.q, 1 / model.q)
            t = np.array([0.2, 0.5, 0.8])
            fd = (g_array(model, u + (t[:, None] + h) * (z - u)) - g_array(model, u + (t[:, None] - h) * (z - u))) / (2 * h)
            assert np.allclose(line_derivative(model, u, z, t), fd, atol=1e-6)

    def test_variation_below_distance_on_grid(self):
        from gibbslab.equilibrium import barycentric_grid
        from gibbslab.path_coupling import closed_form_batch
        q, r = 3, 2
        beta = 0.95 * find_beta_s(q, r)
        pts = barycentric_grid(q, 90)
        dist = np.abs(pts - 1 / q).sum(axis=1)
        pts, dist = pts[dist > 1e-12], dist[dist > 1e-12]
        assert np.all(closed_form_batch(q, r, beta, pts) < dist)
