"""Glauber dynamics: update probabilities, simulation and the exact lumped chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import sparse

from .core import (
    Configuration,
    LatticeDistribution,
    ModelSpec,
    check_simplex,
    g_array,
    gibbs_weights,
    lattice_states,
    state_keys,
)

MAX_MIXING_STEPS = 10_000_000


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox with the 128-bit key ``seed | stream_id << 64``, so each
    trial owns an independent, reproducible stream.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= value < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")
        self.generator = np.random.Generator(np.random.Philox(key=self.seed | (self.stream_id << 64)))

    def uniforms(self, size) -> np.ndarray:
        return self.generator.random(size)


# ---------------------------------------------------------------------------
# update probabilities
# ---------------------------------------------------------------------------


def increment_table(model: ModelSpec, n: int) -> np.ndarray:
    """``T[b] = n (h((b+1)/n) - h(b/n))`` for ``b = 0..n-1``.

    With ``b`` the counts after removing the updated spin, the update
    probabilities are ``softmax(-beta T[b_k])`` over ``k``.
    """
    grid = np.arange(n + 1) / n
    h = model.interaction.value(grid)
    return n * np.diff(h)


def update_probs_from_counts(model: ModelSpec, counts, current_spin: int,
                             table: np.ndarray | None = None) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if counts[current_spin] < 1:
        raise ValueError("current spin has zero count")
    if table is None:
        table = increment_table(model, n)
    base = counts.copy()
    base[current_spin] -= 1
    logits = -model.beta * table[base]
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def update_distribution(model: ModelSpec, config: Configuration, vertex: int,
                        counts=None) -> np.ndarray:
    """Heat-bath law of the new spin at ``vertex``.

    Pass ``counts`` (the empirical counts of ``config``) to avoid recounting.
    """
    if counts is None:
        counts = np.bincount(config.spins, minlength=config.q)
    return update_probs_from_counts(model, counts, int(config.spins[vertex]))


def update_distribution_expansion(model: ModelSpec, z, current_spin: int, n: int) -> np.ndarray:
    """First-order large-``n`` expansion ``g(z) + (beta/n) phi(z)`` of the update law."""
    z = check_simplex(z, model.q)
    s = g_array(model, z)
    curv = model.interaction.d2(z) * np.ones_like(z)
    grad = np.diag(s) - np.outer(s, s)  # row k: gradient of the k-th softmax output
    phi = -0.5 * grad @ curv + curv[current_spin] * grad[:, current_spin]
    return s + model.beta / n * phi


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _probs(table, beta, counts, m, out):
    q = counts.size
    mx = -np.inf
    for k in range(q):
        b = counts[k] - 1 if k == m else counts[k]
        x = -beta * table[b]
        out[k] = x
        if x > mx:
            mx = x
    s = 0.0
    for k in range(q):
        out[k] = np.exp(out[k] - mx)
        s += out[k]
    for k in range(q):
        out[k] /= s


@numba.njit(cache=True, nogil=True)
def _pick(p, u):
    acc = 0.0
    last = p.size - 1
    for k in range(last):
        acc += p[k]
        if u < acc:
            return k
    return last


@numba.njit(cache=True, nogil=True)
def _run_chain(spins, counts, table, beta, uniforms, record_every, out):
    n = spins.size
    q = counts.size
    p = np.empty(q)
    rec = 0
    for t in range(uniforms.shape[0]):
        i = min(int(uniforms[t, 0] * n), n - 1)
        m = spins[i]
        _probs(table, beta, counts, m, p)
        k = _pick(p, uniforms[t, 1])
        spins[i] = k
        counts[m] -= 1
        counts[k] += 1
        if record_every > 0 and (t + 1) % record_every == 0:
            out[rec, :] = counts
            rec += 1
    return rec


@numba.njit(cache=True, nogil=True)
def _occupation(spins, counts, table, beta, uniforms, weights, hist):
    n = spins.size
    q = counts.size
    p = np.empty(q)
    for t in range(uniforms.shape[0]):
        i = min(int(uniforms[t, 0] * n), n - 1)
        m = spins[i]
        _probs(table, beta, counts, m, p)
        k = _pick(p, uniforms[t, 1])
        spins[i] = k
        counts[m] -= 1
        counts[k] += 1
        key = 0
        for j in range(q):
            key += counts[j] * weights[j]
        hist[key] += 1


def glauber_step(model: ModelSpec, spins: np.ndarray, counts: np.ndarray, rng: RngStream,
                 table: np.ndarray | None = None) -> tuple[int, int]:
    """Resample one uniformly chosen vertex in place; returns ``(vertex, new_spin)``."""
    n = spins.size
    if table is None:
        table = increment_table(model, n)
    u = rng.uniforms(2)
    i = min(int(u[0] * n), n - 1)
    m = int(spins[i])
    p = np.empty(counts.size)
    _probs(table, model.beta, counts, m, p)
    k = int(_pick(p, u[1]))
    spins[i] = k
    counts[m] -= 1
    counts[k] += 1
    return i, k


@dataclass
class Trajectory:
    times: np.ndarray
    counts: np.ndarray  # one row per recorded time


def simulate(model: ModelSpec, config: Configuration, steps: int, rng: RngStream,
             record_every: int = 1, block: int = 1 << 18) -> Trajectory:
    """Run ``steps`` Glauber updates from ``config``, recording counts every ``record_every`` steps."""
    if record_every < 1:
        raise ValueError("record_every must be positive")
    spins = np.array(config.spins, dtype=np.int64)
    counts = np.bincount(spins, minlength=model.q).astype(np.int64)
    table = increment_table(model, config.n)
    n_rec = steps // record_every
    out = np.empty((n_rec + 1, model.q), dtype=np.int64)
    out[0] = counts
    filled = 1
    done = 0
    # keep blocks aligned to record_every so recording indices line up
    block = max(record_every, block - block % record_every)
    while done < steps:
        m = min(block, steps - done)
        u = rng.uniforms((m, 2))
        filled += _run_chain(spins, counts, table, model.beta, u, record_every, out[filled:])
        done += m
    times = np.arange(filled) * record_every
    return Trajectory(times, out[:filled])


def occupation_frequencies(model: ModelSpec, config: Configuration, steps: int, burn_in: int,
                           rng: RngStream, block: int = 1 << 20) -> LatticeDistribution:
    """Empirical frequencies of the count vector along a simulated run."""
    n = config.n
    spins = np.array(config.spins, dtype=np.int64)
    counts = np.bincount(spins, minlength=model.q).astype(np.int64)
    table = increment_table(model, n)
    states = lattice_states(n, model.q)
    weights = (n + 1) ** np.arange(model.q - 1, -1, -1, dtype=np.int64)
    hist = np.zeros((n + 1) ** model.q, dtype=np.int64)
    scratch = np.zeros_like(hist)
    done = 0
    while done < burn_in:
        m = min(block, burn_in - done)
        _occupation(spins, counts, table, model.beta, rng.uniforms((m, 2)), weights, scratch)
        done += m
    done = 0
    while done < steps:
        m = min(block, steps - done)
        _occupation(spins, counts, table, model.beta, rng.uniforms((m, 2)), weights, hist)
        done += m
    freq = hist[state_keys(states, n)] / steps
    with np.errstate(divide="ignore"):
        log_freq = np.log(freq)
    return LatticeDistribution(n, states, freq, log_freq)


# ---------------------------------------------------------------------------
# exact lumped chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LumpedKernel:
    """Glauber dynamics projected onto count vectors (lexicographic states)."""

    model: ModelSpec
    n: int
    states: np.ndarray
    matrix: sparse.csr_matrix

    @property
    def q(self) -> int:
        return self.model.q

    def index(self, counts) -> int:
        keys = state_keys(self.states, self.n)
        key = state_keys(np.asarray(counts, dtype=np.int64), self.n)
        i = int(np.searchsorted(keys, key))
        if i >= keys.size or keys[i] != key:
            raise KeyError(tuple(counts))
        return i

    def stationary(self) -> LatticeDistribution:
        return gibbs_weights(self.model, self.n)


def build_lumped_kernel(model: ModelSpec, n: int) -> LumpedKernel:
    """Exact transition matrix of the count-vector chain.

    From counts ``c`` a vertex of spin ``m`` is hit with probability
    ``c_m/n`` and moved to ``k`` with the heat-bath probability; moves with
    ``k = m`` land on the diagonal.
    """
    q = model.q
    states = lattice_states(n, q)
    keys = state_keys(states, n)
    size = states.shape[0]
    table = increment_table(model, n)
    rows, cols, vals = [], [], []
    idx = np.arange(size)
    for m in range(q):
        live = states[:, m] > 0
        base = states[live].copy()
        base[:, m] -= 1
        logits = -model.beta * table[base]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        rate = states[live, m] / n
        for k in range(q):
            target = base.copy()
            target[:, k] += 1
            rows.append(idx[live])
            cols.append(np.searchsorted(keys, state_keys(target, n)))
            vals.append(rate * p[:, k])
    mat = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(size, size)).tocsr()
    mat.sum_duplicates()
    return LumpedKernel(model, n, states, mat)


def default_starts(states: np.ndarray) -> np.ndarray:
    """Indices of the ``q`` pure states and the most balanced state."""
    n = int(states[0].sum())
    q = states.shape[1]
    pure = [int(np.flatnonzero(states[:, k] == n)[0]) for k in range(q)]
    spread = np.abs(states - n / q).sum(axis=1)
    balanced = int(np.argmin(spread))
    return np.array(sorted(set(pure + [balanced])), dtype=np.int64)


@dataclass(frozen=True)
class MixingResult:
    t_mix: int
    d_curve: np.ndarray  # d(0), d(1), ..., d(t_mix)
    starts: np.ndarray


def exact_mixing_time(kernel: LumpedKernel, epsilon: float = 0.25, all_starts: bool = False,
                      starts=None, max_steps: int = MAX_MIXING_STEPS) -> MixingResult:
    """First ``t`` with ``max_x ||P^t(x, .) - pi||_TV <= epsilon`` on the lumped chain."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    pi = kernel.stationary().probs
    size = pi.size
    if starts is None:
        starts = np.arange(size) if all_starts else default_starts(kernel.states)
    starts = np.asarray(starts, dtype=np.int64)
    dist = np.zeros((size, starts.size))
    dist[starts, np.arange(starts.size)] = 1.0
    pt = kernel.matrix.T.tocsr()
    curve = []
    t = 0
    while True:
        d = 0.5 * np.abs(dist - pi[:, None]).sum(axis=0).max()
        curve.append(d)
        if d <= epsilon:
            break
        if t >= max_steps:
            raise RuntimeError(f"d(t) still {d:.3g} after {max_steps} steps")
        dist = pt @ dist
        t += 1
    return MixingResult(t, np.array(curve), starts)


def tv_curves(kernel: LumpedKernel, x: int, y: int, steps: int) -> np.ndarray:
    """``||P^t(x, .) - P^t(y, .)||_TV`` for ``t = 0..steps``."""
    size = kernel.states.shape[0]
    dist = np.zeros((size, 2))
    dist[x, 0] = 1.0
    dist[y, 1] = 1.0
    pt = kernel.matrix.T.tocsr()
    out = np.empty(steps + 1)
    for t in range(steps + 1):
        out[t] = 0.5 * np.abs(dist[:, 0] - dist[:, 1]).sum()
        dist = pt @ dist
    return out
