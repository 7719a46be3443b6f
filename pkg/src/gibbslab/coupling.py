"""Greedy coupling of two Glauber chains and coupling-time experiments."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import MAX_STATES, Configuration, ModelSpec, gibbs_weights, n_lattice_states
from .glauber import (
    RngStream,
    _pick,
    _probs,
    _run_chain,
    increment_table,
    update_probs_from_counts,
)

COUPLING_CAP = 10**9
INITS = ("worst_pure_pair", "random_pair", "equilibrium_vs_pure")


def greedy_joint(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Joint law of the greedy coupling of two spin distributions as a ``q x q`` matrix."""
    common = np.minimum(p, q)
    total = common.sum()
    joint = np.diag(common)
    if 1.0 - total > 0:
        rp, rq = p - common, q - common
        cross = np.outer(rp, rq) / (1.0 - total)
        if np.any(np.diag(cross) > 0):
            raise AssertionError("greedy residuals overlap on the diagonal")
        joint = joint + cross
    return joint


@dataclass
class CouplingTrial:
    """Two coupled configurations with their counts and Hamming distance."""

    sigma: np.ndarray
    tau: np.ndarray
    rng: RngStream
    q: int
    time: int = 0
    counts_sigma: np.ndarray = field(init=False)
    counts_tau: np.ndarray = field(init=False)
    distance: int = field(init=False)

    def __post_init__(self):
        self.sigma = np.array(self.sigma, dtype=np.int64)
        self.tau = np.array(self.tau, dtype=np.int64)
        if self.sigma.shape != self.tau.shape:
            raise ValueError("configurations must have the same size")
        self.counts_sigma = np.bincount(self.sigma, minlength=self.q).astype(np.int64)
        self.counts_tau = np.bincount(self.tau, minlength=self.q).astype(np.int64)
        self.distance = int(np.count_nonzero(self.sigma != self.tau))

    @property
    def n(self) -> int:
        return self.sigma.size


def greedy_coupling_step(model: ModelSpec, trial: CouplingTrial) -> CouplingTrial:
    """Advance both chains by one coupled update (in place)."""
    n = trial.n
    u = trial.rng.uniforms(3)
    j = min(int(u[0] * n), n - 1)
    a, b = int(trial.sigma[j]), int(trial.tau[j])
    p = update_probs_from_counts(model, trial.counts_sigma, a)
    r = update_probs_from_counts(model, trial.counts_tau, b)
    common = np.minimum(p, r)
    total = common.sum()
    if u[1] < total or 1.0 - total <= 0:
        x = y = int(_pick(common / total, u[1] / total))
    else:
        v = (u[1] - total) / (1.0 - total)
        rp, rr = p - common, r - common
        x = int(_pick(rp / rp.sum(), v))
        y = int(_pick(rr / rr.sum(), u[2]))
        if x == y:
            raise AssertionError("unmatched branch produced equal spins")
    trial.distance += int(x != y) - int(a != b)
    trial.counts_sigma[a] -= 1
    trial.counts_sigma[x] += 1
    trial.counts_tau[b] -= 1
    trial.counts_tau[y] += 1
    trial.sigma[j], trial.tau[j] = x, y
    trial.time += 1
    return trial


@numba.njit(cache=True, nogil=True)
def _couple(sx, sy, cx, cy, table, beta, uniforms, dist, t0, record_every, trace):
    # returns (steps used, distance, number of trace entries written)
    n = sx.size
    q = cx.size
    p = np.empty(q)
    r = np.empty(q)
    common = np.empty(q)
    rec = 0
    for s in range(uniforms.shape[0]):
        if dist == 0:
            return s, dist, rec
        j = min(int(uniforms[s, 0] * n), n - 1)
        a = sx[j]
        b = sy[j]
        _probs(table, beta, cx, a, p)
        _probs(table, beta, cy, b, r)
        total = 0.0
        for k in range(q):
            common[k] = min(p[k], r[k])
            total += common[k]
        u = uniforms[s, 1]
        if u < total or 1.0 - total <= 1e-15:
            acc = 0.0
            x = q - 1
            for k in range(q):
                acc += common[k]
                if u < acc:
                    x = k
                    break
            y = x
        else:
            v = (u - total) / (1.0 - total)
            sp = 0.0
            sr = 0.0
            for k in range(q):
                sp += p[k] - common[k]
                sr += r[k] - common[k]
            x = q - 1
            acc = 0.0
            for k in range(q):
                acc += (p[k] - common[k]) / sp
                if v < acc:
                    x = k
                    break
            y = q - 1
            acc = 0.0
            w = uniforms[s, 2]
            for k in range(q):
                acc += (r[k] - common[k]) / sr
                if w < acc:
                    y = k
                    break
        if a != b:
            dist -= 1
        if x != y:
            dist += 1
        sx[j] = x
        sy[j] = y
        cx[a] -= 1
        cx[x] += 1
        cy[b] -= 1
        cy[y] += 1
        if record_every > 0 and (t0 + s + 1) % record_every == 0:
            trace[rec] = dist
            rec += 1
    return uniforms.shape[0], dist, rec


def kappa(model: ModelSpec, sigma: Configuration, tau: Configuration, vertex: int,
          counts_sigma=None, counts_tau=None) -> float:
    """Probability that the greedy coupling updates ``vertex`` to different spins."""
    if counts_sigma is None:
        counts_sigma = np.bincount(sigma.spins, minlength=model.q)
    if counts_tau is None:
        counts_tau = np.bincount(tau.spins, minlength=model.q)
    p = update_probs_from_counts(model, counts_sigma, int(sigma.spins[vertex]))
    r = update_probs_from_counts(model, counts_tau, int(tau.spins[vertex]))
    return 0.5 * float(np.abs(p - r).sum())


def expected_onestep_distance(model: ModelSpec, sigma: Configuration, tau: Configuration) -> float:
    """Exact mean Hamming distance after one greedy-coupled step.

    ``kappa`` only depends on the spin pair at the vertex, so it is evaluated
    once per occupied pair of the ``q x q`` contingency table.
    """
    n = sigma.n
    cs = np.bincount(sigma.spins, minlength=model.q)
    ct = np.bincount(tau.spins, minlength=model.q)
    pairs = np.zeros((model.q, model.q), dtype=np.int64)
    np.add.at(pairs, (sigma.spins, tau.spins), 1)
    d = n - int(np.trace(pairs))
    total = float(d)
    for a, b in zip(*np.nonzero(pairs)):
        p = update_probs_from_counts(model, cs, a)
        r = update_probs_from_counts(model, ct, b)
        k = 0.5 * float(np.abs(p - r).sum())
        total += pairs[a, b] / n * (k - 1.0 if a != b else k)
    return total


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class CouplingResult:
    model: ModelSpec
    n: int
    init: str
    seed: int
    times: np.ndarray  # coupling time per trial (the cap for censored trials)
    censored: np.ndarray
    record_every: int
    mean_distance: np.ndarray  # E d(X^t, Y^t) at t = 0, record_every, 2*record_every, ...
    approximate_start: bool = False

    @property
    def curve_times(self) -> np.ndarray:
        return np.arange(self.mean_distance.size) * self.record_every

    def summary(self) -> dict:
        times = self.times.astype(float)
        return {
            "median": float(np.median(times)),
            "q90": float(np.quantile(times, 0.9)),
            "censored_fraction": float(self.censored.mean()),
            "n": self.n,
            "beta": self.model.beta,
            "q": self.model.q,
            "r": self.model.r,
            "seed": self.seed,
            "trials": int(self.times.size),
            "init": self.init,
            "approximate_start": self.approximate_start,
        }


def default_threads() -> int:
    env = os.environ.get("GIBBSLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _initial_pair(model: ModelSpec, n: int, init: str, rng: RngStream,
                  weights) -> tuple[np.ndarray, np.ndarray]:
    gen = rng.generator
    q = model.q
    if init == "worst_pure_pair":
        return np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)
    if init == "random_pair":
        return gen.integers(0, q, size=n), gen.integers(0, q, size=n)
    if init == "equilibrium_vs_pure":
        if weights is not None:
            counts = weights.sample_counts(gen)
            sigma = gen.permutation(np.repeat(np.arange(q), counts))
        else:
            sigma = gen.integers(0, q, size=n).astype(np.int64)
            counts = np.bincount(sigma, minlength=q).astype(np.int64)
            burn = int(50 * n * max(math.log(n), 1.0))
            _run_chain(sigma, counts, increment_table(model, n), model.beta,
                       gen.random((burn, 2)), 0, np.empty((1, q), dtype=np.int64))
        return np.asarray(sigma, dtype=np.int64), np.zeros(n, dtype=np.int64)
    raise ValueError(f"unknown init {init!r}; expected one of {INITS}")


def _one_trial(model, n, init, seed, trial, cap, record_every, table, weights, block):
    rng = RngStream(seed, trial)
    sx, sy = _initial_pair(model, n, init, rng, weights)
    sx, sy = sx.copy(), sy.copy()
    cx = np.bincount(sx, minlength=model.q).astype(np.int64)
    cy = np.bincount(sy, minlength=model.q).astype(np.int64)
    dist = int(np.count_nonzero(sx != sy))
    trace = [np.array([dist])]
    buf = np.empty(block // record_every + 1, dtype=np.int64)
    t = 0
    # blocks grow from a small first chunk so short trials draw few uniforms;
    # the schedule depends only on the arguments, keeping streams reproducible
    size = max(record_every, 4096 - 4096 % record_every)
    while dist > 0 and t < cap:
        m = min(size, cap - t)
        size = min(2 * size, block)
        used, dist, rec = _couple(sx, sy, cx, cy, table, model.beta, rng.uniforms((m, 3)),
                                  dist, t, record_every, buf)
        trace.append(buf[:rec].copy())
        t += used
    return t, dist > 0, np.concatenate(trace)


def run_coupling(model: ModelSpec, n: int, init: str = "worst_pure_pair", trials: int = 200,
                 seed: int = 0, cap: int = COUPLING_CAP, record_every: int | None = None,
                 threads: int | None = None, block: int = 1 << 16) -> CouplingResult:
    """Run independent greedy-coupled pairs until they coalesce or hit ``cap`` steps.

    Trial ``i`` draws everything from the stream ``(seed, i)``, so results do
    not depend on the thread count.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}; expected one of {INITS}")
    record_every = record_every or n
    block = max(record_every, block - block % record_every)
    table = increment_table(model, n)
    weights = None
    approximate = False
    if init == "equilibrium_vs_pure":
        if n_lattice_states(n, model.q) <= MAX_STATES:
            weights = gibbs_weights(model, n)
        else:
            approximate = True
    threads = threads or default_threads()
    args = (model, n, init, seed)
    tail = (cap, record_every, table, weights, block)
    if threads == 1:
        results = [_one_trial(*args, i, *tail) for i in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _one_trial(*args, i, *tail), range(trials)))
    times = np.array([r[0] for r in results], dtype=np.int64)
    censored = np.array([r[1] for r in results], dtype=bool)
    length = max(r[2].size for r in results)
    total = np.zeros(length)
    for _, cens, tr in results:
        total[:tr.size] += tr
        if cens:
            total[tr.size:] += tr[-1]
    return CouplingResult(model, n, init, seed, times, censored, record_every,
                          total / trials, approximate)
