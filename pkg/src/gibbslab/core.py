"""Static model quantities for mean-field Gibbs ensembles.

Spins take values 0..q-1 and the single-spin law is uniform on those q
symbols.  The interaction is separable, ``H(z) = sum_k h(z_k)``, with the
same scalar ``h`` applied to every coordinate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, rel_entr

SIMPLEX_TOL = 1e-12
MAX_STATES = 5_000_000

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def check_simplex(z, q: int | None = None) -> np.ndarray:
    """Validate ``z`` as a point of the probability simplex and return it as an array.

    Points off the simplex are rejected, never renormalized.
    """
    if isinstance(z, SimplexPoint):
        arr = z.coords
    else:
        arr = np.asarray(z, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"simplex point must be a 1-D vector, got shape {arr.shape}")
    if q is not None and arr.size != q:
        raise ValueError(f"expected {q} coordinates, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("simplex point has non-finite coordinates")
    if np.any(arr < 0):
        raise ValueError(f"simplex point has negative coordinates: {arr}")
    if abs(arr.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"coordinates sum to {arr.sum()!r}, not 1")
    return arr


@dataclass(frozen=True)
class SimplexPoint:
    """A probability vector in the continuous simplex."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen_array(check_simplex(self.coords)))

    @property
    def q(self) -> int:
        return self.coords.size

    @classmethod
    def uniform(cls, q: int) -> "SimplexPoint":
        return cls(np.full(q, 1.0 / q))

    @classmethod
    def vertex(cls, q: int, k: int) -> "SimplexPoint":
        z = np.zeros(q)
        z[k] = 1.0
        return cls(z)

    def to_json(self) -> str:
        return json.dumps([float(x) for x in self.coords])

    @classmethod
    def from_json(cls, text: str) -> "SimplexPoint":
        return cls(json.loads(text))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, SimplexPoint):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())


@dataclass(frozen=True)
class LatticePoint:
    """Integer spin counts ``counts`` summing to the system size ``n``."""

    counts: tuple[int, ...]
    n: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if self.n < 1:
            raise ValueError("n must be positive")
        if any(c < 0 for c in counts):
            raise ValueError(f"negative count in {counts}")
        if sum(counts) != self.n:
            raise ValueError(f"counts {counts} do not sum to n={self.n}")
        object.__setattr__(self, "counts", counts)

    @property
    def q(self) -> int:
        return len(self.counts)

    def to_simplex(self) -> SimplexPoint:
        return SimplexPoint(np.asarray(self.counts, dtype=float) / self.n)

    def to_json(self) -> str:
        return json.dumps(list(self.counts))

    @classmethod
    def from_json(cls, text: str) -> "LatticePoint":
        counts = json.loads(text)
        return cls(tuple(counts), sum(counts))


@dataclass(frozen=True)
class Configuration:
    """Spin assignment of ``n`` vertices, labels in ``0..q-1``."""

    spins: np.ndarray
    q: int

    def __post_init__(self):
        spins = np.asarray(self.spins)
        if spins.ndim != 1 or spins.size < 1:
            raise ValueError("configuration needs at least one vertex")
        if not np.issubdtype(spins.dtype, np.integer):
            if not np.all(spins == np.round(spins)):
                raise ValueError("spin labels must be integers")
        spins = spins.astype(np.int64)
        if spins.min() < 0 or spins.max() >= self.q:
            raise ValueError(f"spin labels must lie in 0..{self.q - 1}")
        object.__setattr__(self, "spins", _frozen_array(spins, np.int64))

    @property
    def n(self) -> int:
        return self.spins.size

    @classmethod
    def pure(cls, n: int, q: int, spin: int = 0) -> "Configuration":
        return cls(np.full(n, spin), q)

    @classmethod
    def random(cls, n: int, q: int, rng: np.random.Generator) -> "Configuration":
        return cls(rng.integers(0, q, size=n), q)

    @classmethod
    def from_counts(cls, counts: Sequence[int], q: int | None = None) -> "Configuration":
        """Sorted configuration (all 0s, then all 1s, ...) with the given counts."""
        q = len(counts) if q is None else q
        return cls(np.repeat(np.arange(len(counts)), counts), q)

    def hamming(self, other: "Configuration") -> int:
        if other.n != self.n:
            raise ValueError("configurations have different sizes")
        return int(np.count_nonzero(self.spins != other.spins))

    def with_spin(self, vertex: int, spin: int) -> "Configuration":
        spins = self.spins.copy()
        spins[vertex] = spin
        return Configuration(spins, self.q)


# ---------------------------------------------------------------------------
# interactions
# ---------------------------------------------------------------------------


class Interaction:
    """Scalar interaction ``h`` with derivatives; ``H(z) = sum_k h(z_k)``.

    Subclasses implement ``value``, ``d1`` and ``d2`` as vectorized maps.
    ``neg_conjugate(s)`` is the 1-D Legendre transform of ``-h`` over
    ``x >= 0``; the default maximizes ``x*s + h(x)`` by golden section.
    """

    name = "custom"

    def value(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError

    def neg_conjugate(self, s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        for idx, si in np.ndenumerate(s):
            out[idx] = _concave_max(lambda x: x * si + float(self.value(x)),
                                    lambda x: si + float(self.d1(x)))
        return out if out.ndim else float(out)

    def params(self) -> dict:
        return {"interaction": self.name}


class PowerInteraction(Interaction):
    """``h(t) = -t**r / r``: the generalized Curie-Weiss-Potts interaction."""

    name = "gcwp"

    def __init__(self, r: float):
        if not r >= 2:
            raise ValueError(f"interaction exponent r must be >= 2, got {r}")
        self.r = float(r)

    def value(self, t):
        return -np.power(t, self.r) / self.r

    def d1(self, t):
        return -np.power(t, self.r - 1.0)

    def d2(self, t):
        if self.r == 2.0:
            return -np.ones_like(np.asarray(t, dtype=float))
        return -(self.r - 1.0) * np.power(t, self.r - 2.0)

    def neg_conjugate(self, s):
        # conjugate of t^r/r is s^r'/r' with r' = r/(r-1), for s >= 0
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("closed-form conjugate needs nonnegative arguments")
        rp = self.r / (self.r - 1.0)
        out = np.power(s, rp) / rp
        return out if out.ndim else float(out)

    def params(self) -> dict:
        return {"interaction": self.name, "r": self.r}

    def __repr__(self):
        return f"PowerInteraction(r={self.r:g})"


class CallableInteraction(Interaction):
    """Interaction built from user callables (vectorized over numpy arrays)."""

    def __init__(self, value: Callable, d1: Callable, d2: Callable, name: str = "custom"):
        self._value, self._d1, self._d2 = value, d1, d2
        self.name = name

    def value(self, t):
        return self._value(t)

    def d1(self, t):
        return self._d1(t)

    def d2(self, t):
        return self._d2(t)


def _concave_max(f: Callable[[float], float], df: Callable[[float], float],
                 tol: float = 1e-12, max_bracket: float = 1e8) -> float:
    """Maximum over ``x >= 0`` of a concave 1-D function (adaptive bracket, golden section)."""
    if df(0.0) <= 0:
        return f(0.0)
    b = 1.0
    while not df(b) < 0:
        b *= 2.0
        if b > max_bracket:
            raise ValueError("could not bracket the maximizer; interaction is not coercive")
    lo, hi = 0.0, b
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol * max(1.0, abs(lo) + abs(hi)):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = f(x1)
    return f(0.5 * (lo + hi))


@dataclass(frozen=True)
class ModelSpec:
    """Number of spin values, inverse temperature and interaction."""

    q: int
    beta: float
    interaction: Interaction = field(compare=False)

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q}")
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be a finite nonnegative number, got {self.beta}")
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def gcwp(cls, q: int, r: float, beta: float) -> "ModelSpec":
        return cls(q, beta, PowerInteraction(r))

    @property
    def is_gcwp(self) -> bool:
        return isinstance(self.interaction, PowerInteraction)

    @property
    def r(self) -> float | None:
        return self.interaction.r if self.is_gcwp else None

    def with_beta(self, beta: float) -> "ModelSpec":
        return ModelSpec(self.q, beta, self.interaction)

    def params(self) -> dict:
        return {"q": self.q, "beta": self.beta, **self.interaction.params()}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def empirical_measure(config: Configuration) -> LatticePoint:
    counts = np.bincount(config.spins, minlength=config.q)
    return LatticePoint(tuple(counts.tolist()), config.n)


def hamiltonian(model: ModelSpec, z) -> float:
    z = check_simplex(z, model.q)
    return float(np.sum(model.interaction.value(z)))


def log_mgf(q: int, z) -> float:
    z = np.asarray(z, dtype=float)
    return float(logsumexp(z) - math.log(q))


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def g_array(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Unvalidated ``g`` on an array of points with the coordinate axis last."""
    return _softmax(-model.beta * model.interaction.d1(np.asarray(z, dtype=float)))


def g_function(model: ModelSpec, z) -> SimplexPoint:
    """Softmax map ``g_k(z) = exp(-beta h'(z_k)) / sum_l exp(-beta h'(z_l))``."""
    z = check_simplex(z, model.q)
    out = g_array(model, z)
    # guard against rounding drift of the sum beyond the simplex tolerance
    out = out / out.sum()
    return SimplexPoint(out)


def g_jacobian(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Jacobian ``d g_k / d z_j`` (last two axes ``k, j``) of the softmax map."""
    z = np.asarray(z, dtype=float)
    s = g_array(model, z)
    w = -model.beta * model.interaction.d2(z)
    eye = np.eye(model.q)
    return s[..., :, None] * (eye - s[..., None, :]) * w[..., None, :]


def relative_entropy(nu, rho) -> float:
    nu = check_simplex(nu)
    rho = check_simplex(rho, nu.size)
    if np.any((rho == 0) & (nu > 0)):
        raise ValueError("relative entropy is infinite: rho vanishes where nu does not")
    return float(np.sum(rel_entr(nu, rho)))


def objective_array(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    """``R(z | uniform) + beta H(z)`` on an array of points (coordinate axis last)."""
    z = np.asarray(z, dtype=float)
    ent = np.sum(rel_entr(z, 1.0 / model.q), axis=-1)
    return ent + model.beta * np.sum(model.interaction.value(z), axis=-1)


def rate_function(model: ModelSpec, z, min_value: float) -> float:
    rho = np.full(model.q, 1.0 / model.q)
    z = check_simplex(z, model.q)
    return relative_entropy(z, rho) + model.beta * hamiltonian(model, z) - min_value


def free_energy(model: ModelSpec, z) -> float:
    """Free energy functional ``beta (-H)*(-grad H(z)) - Gamma(-beta grad H(z))``.

    Accepts any point where the interaction is defined, not only simplex points.
    """
    z = np.asarray(z, dtype=float)
    slope = -model.interaction.d1(z)
    conj = np.sum(model.interaction.neg_conjugate(slope))
    return float(model.beta * conj - log_mgf(model.q, model.beta * slope))


# ---------------------------------------------------------------------------
# exact Gibbs weights on the lattice simplex
# ---------------------------------------------------------------------------


def n_lattice_states(n: int, q: int) -> int:
    return math.comb(n + q - 1, q - 1)


def lattice_states(n: int, q: int) -> np.ndarray:
    """All count vectors of ``q`` nonnegative integers summing to ``n``, lexicographically ascending."""
    size = n_lattice_states(n, q)
    if size > MAX_STATES:
        raise ValueError(f"lattice simplex has {size} states, above the guard of {MAX_STATES}")
    return _compositions(n, q)


def _compositions(n: int, q: int) -> np.ndarray:
    if q == 1:
        return np.array([[n]], dtype=np.int64)
    blocks = []
    for first in range(n + 1):
        rest = _compositions(n - first, q - 1)
        head = np.full((rest.shape[0], 1), first, dtype=np.int64)
        blocks.append(np.hstack([head, rest]))
    return np.vstack(blocks)


def state_keys(states: np.ndarray, n: int) -> np.ndarray:
    """Integer keys that sort in the same order as the lexicographic states."""
    q = states.shape[-1]
    weights = (n + 1) ** np.arange(q - 1, -1, -1, dtype=np.int64)
    return states @ weights


@dataclass(frozen=True)
class LatticeDistribution:
    """A probability distribution over the count vectors of a size-``n`` system."""

    n: int
    states: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray

    @property
    def q(self) -> int:
        return self.states.shape[1]

    def index(self, counts: Iterable[int]) -> int:
        key = state_keys(np.asarray(list(counts), dtype=np.int64), self.n)
        keys = state_keys(self.states, self.n)
        i = int(np.searchsorted(keys, key))
        if i >= keys.size or keys[i] != key:
            raise KeyError(tuple(counts))
        return i

    def prob(self, counts) -> float:
        if isinstance(counts, LatticePoint):
            counts = counts.counts
        return float(self.probs[self.index(counts)])

    def as_dict(self) -> dict[LatticePoint, float]:
        return {LatticePoint(tuple(s), self.n): float(p) for s, p in zip(self.states.tolist(), self.probs)}

    def sample_counts(self, rng: np.random.Generator) -> np.ndarray:
        return self.states[rng.choice(self.probs.size, p=self.probs)].copy()


def gibbs_weights(model: ModelSpec, n: int) -> LatticeDistribution:
    """Exact law of the empirical measure under the Gibbs ensemble of size ``n``."""
    states = lattice_states(n, model.q)
    z = states / n
    log_w = (gammaln(n + 1) - gammaln(states + 1).sum(axis=1) - n * math.log(model.q)
             - model.beta * n * np.sum(model.interaction.value(z), axis=1))
    log_p = log_w - logsumexp(log_w)
    probs = np.exp(log_p)
    probs /= probs.sum()
    return LatticeDistribution(n, states, probs, log_p)
