import numpy as np
import pytest

from gibbslab.core import Configuration, ModelSpec
from gibbslab.coupling import (
    CouplingTrial,
    expected_onestep_distance,
    greedy_coupling_step,
    greedy_joint,
    kappa,
    run_coupling,
)
from gibbslab.glauber import RngStream, update_distribution


def onestep_oracle(model, sigma, tau):
    # average over the vertex and the greedy joint law of the new spin pair
    n = sigma.n
    total = 0.0
    for v in range(n):
        p = update_distribution(model, sigma, v)
        r = update_distribution(model, tau, v)
        joint = greedy_joint(p, r)
        rest = sigma.hamming(tau) - int(sigma.spins[v] != tau.spins[v])
        for x in range(model.q):
            for y in range(model.q):
                total += joint[x, y] / n * (rest + int(x != y))
    return total


class TestGreedyJoint:
    def test_marginals_and_diagonal(self):
        p = np.array([0.5, 0.3, 0.2])
        r = np.array([0.2, 0.3, 0.5])
        joint = greedy_joint(p, r)
        assert np.allclose(joint.sum(axis=1), p)
        assert np.allclose(joint.sum(axis=0), r)
        assert np.trace(joint) == pytest.approx(np.minimum(p, r).sum())
        assert 1 - np.trace(joint) == pytest.approx(0.5 * np.abs(p - r).sum())

    def test_identical_laws(self):
        p = np.array([0.25, 0.75])
        assert np.allclose(greedy_joint(p, p), np.diag(p))


class TestOneStep:
    @pytest.mark.parametrize("q,beta", [(2, 1.0), (3, 2.5), (4, 4.0)])
    def test_expected_distance_matches_enumeration(self, q, beta):
        model = ModelSpec.gcwp(q, 2, beta)
        rng = np.random.default_rng(q)
        sigma = Configuration.random(9, q, rng)
        tau = Configuration.random(9, q, rng)
        assert expected_onestep_distance(model, sigma, tau) == pytest.approx(
            onestep_oracle(model, sigma, tau), abs=1e-12)

    def test_kappa_is_total_variation(self):
        model = ModelSpec.gcwp(3, 2, 2.0)
        sigma = Configuration([0, 0, 1, 2], 3)
        tau = Configuration([0, 1, 1, 2], 3)
        p = update_distribution(model, sigma, 1)
        r = update_distribution(model, tau, 1)
        assert kappa(model, sigma, tau, 1) == pytest.approx(0.5 * np.abs(p - r).sum())

    def test_step_marginals(self):
        # each chain's new spin follows its own heat-bath law
        model = ModelSpec.gcwp(3, 2, 2.0)
        sigma = Configuration([0, 0, 0, 1, 2], 3)
        tau = Configuration([1, 1, 0, 1, 2], 3)
        hits = np.zeros((5, 3))
        picks = np.zeros(5)
        for trial in range(20000):
            t = CouplingTrial(sigma.spins, tau.spins, RngStream(3, trial), 3)
            u = RngStream(3, trial).uniforms(1)[0]
            v = min(int(u * 5), 4)
            greedy_coupling_step(model, t)
            picks[v] += 1
            hits[v, t.sigma[v]] += 1
        for v in range(5):
            p = update_distribution(model, sigma, v)
            assert np.abs(hits[v] / picks[v] - p).max() < 0.04

    def test_distance_bookkeeping(self):
        model = ModelSpec.gcwp(3, 2, 1.0)
        t = CouplingTrial(np.zeros(20, dtype=int), np.ones(20, dtype=int), RngStream(0), 3)
        for _ in range(300):
            greedy_coupling_step(model, t)
            assert t.distance == np.count_nonzero(t.sigma != t.tau)
            assert np.array_equal(t.counts_sigma, np.bincount(t.sigma, minlength=3))
        assert t.time == 300


class TestRunCoupling:
    def test_compiled_matches_python(self):
        model = ModelSpec.gcwp(3, 2, 1.0)
        n = 15
        res = run_coupling(model, n, "worst_pure_pair", trials=4, seed=11, threads=1)
        for i in range(4):
            t = CouplingTrial(np.zeros(n, dtype=int), np.ones(n, dtype=int), RngStream(11, i), 3)
            while t.distance > 0:
                greedy_coupling_step(model, t)
            assert t.time == res.times[i]

    def test_thread_independent(self):
        model = ModelSpec.gcwp(3, 2, 1.5)
        a = run_coupling(model, 40, "random_pair", trials=16, seed=2, threads=1)
        b = run_coupling(model, 40, "random_pair", trials=16, seed=2, threads=4)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.mean_distance, b.mean_distance)

    def test_censoring(self):
        model = ModelSpec.gcwp(3, 2, 1.0)
        res = run_coupling(model, 200, trials=3, seed=0, cap=50)
        assert res.censored.all()
        assert np.all(res.times == 50)
        assert res.summary()["censored_fraction"] == 1.0

    def test_mean_distance_curve(self):
        model = ModelSpec.gcwp(3, 2, 1.0)
        res = run_coupling(model, 30, trials=50, seed=5, record_every=5)
        assert res.mean_distance[0] == 30
        assert res.curve_times[1] == 5
        assert res.mean_distance[-1] <= 1.0
        assert res.mean_distance.size == res.curve_times.size

    def test_equilibrium_start(self):
        model = ModelSpec.gcwp(3, 2, 1.0)
        res = run_coupling(model, 20, "equilibrium_vs_pure", trials=10, seed=1)
        assert not res.approximate_start
        assert not res.censored.any()

    def test_summary_fields(self):
        res = run_coupling(ModelSpec.gcwp(2, 2, 1.0), 20, trials=5, seed=0)
        s = res.summary()
        assert set(s) >= {"median", "q90", "censored_fraction", "n", "beta", "q", "r", "seed", "trials"}

    def test_bad_arguments(self):
        model = ModelSpec.gcwp(2, 2, 1.0)
        with pytest.raises(ValueError):
            run_coupling(model, 10, init="nope")
        with pytest.raises(ValueError):
            run_coupling(model, 10, trials=0)


class TestCouplingInvariants:
    def test_coalescence_is_absorbing(self):
        # identical configurations stay identical for 1e6 coupled steps; the distance
        # argument is set to 1 so the kernel does not stop at coalescence
        from gibbslab.coupling import _couple
        from gibbslab.glauber import increment_table
        model = ModelSpec.gcwp(3, 2, 2.0)
        n = 30
        sx = np.random.default_rng(0).integers(0, 3, n)
        sy = sx.copy()
        cx = np.bincount(sx, minlength=3)
        cy = cx.copy()
        u = RngStream(1).uniforms((1_000_000, 3))
        used, dist, _ = _couple(sx, sy, cx, cy, increment_table(model, n), model.beta, u, 1, 0, 0,
                                np.empty(1, dtype=np.int64))
        assert used == 1_000_000 and dist == 1
        assert np.array_equal(sx, sy) and np.array_equal(cx, cy)

    def test_disagreement_rate_equals_kappa(self):
        model = ModelSpec.gcwp(3, 2, 2.0)
        sigma = Configuration([0, 0, 0, 1, 2], 3)
        tau = Configuration([1, 1, 0, 1, 2], 3)
        differ = np.zeros(5)
        picks = np.zeros(5)
        for trial in range(20000):
            t = CouplingTrial(sigma.spins, tau.spins, RngStream(8, trial), 3)
            v = min(int(RngStream(8, trial).uniforms(1)[0] * 5), 4)
            greedy_coupling_step(model, t)
            picks[v] += 1
            differ[v] += t.sigma[v] != t.tau[v]
        for v in range(5):
            k = kappa(model, sigma, tau, v)
            se = np.sqrt(max(k * (1 - k), 1e-12) / picks[v])
            assert abs(differ[v] / picks[v] - k) <= 3 * se + 1e-12

    def test_onestep_below_linearized_bound(self):
        # E d <= d - (d/n)(1 - k) + ((n - d)/n) k with k the largest measured per-vertex kappa
        model = ModelSpec.gcwp(3, 2, 2.0)
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = 40
            sigma = Configuration.random(n, 3, rng)
            flips = rng.choice(n, size=int(rng.integers(1, 5)), replace=False)
            spins = sigma.spins.copy()
            spins[flips] = (spins[flips] + 1) % 3
            tau = Configuration(spins, 3)
            d = sigma.hamming(tau)
            k = max(kappa(model, sigma, tau, v) for v in range(n))
            bound = d - d / n * (1 - k) + (n - d) / n * k
            assert expected_onestep_distance(model, sigma, tau) <= bound + 1e-12
