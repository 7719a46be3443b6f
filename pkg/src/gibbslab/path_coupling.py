"""Monotone paths, aggregate g-variation and the contraction-condition checkers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize

from .core import ModelSpec, SimplexPoint, check_simplex, g_array, g_jacobian
from .equilibrium import (
    EquilibriumSolution,
    barycentric_grid,
    default_grid_resolution,
    find_equilibria,
)

EXCLUSION_RADIUS = 1e-4
ROOT_TOL = 1e-12
LOCAL_RADII = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


# ---------------------------------------------------------------------------
# monotone paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonotonePath:
    points: np.ndarray  # (steps + 1, q)
    epsilon: float

    @property
    def steps(self) -> np.ndarray:
        return np.abs(np.diff(self.points, axis=0)).sum(axis=1)

    def is_monotone(self) -> bool:
        diffs = np.diff(self.points, axis=0)
        rising = np.all(diffs >= -1e-15, axis=0)
        falling = np.all(diffs <= 1e-15, axis=0)
        return bool(np.all(rising | falling))

    def __len__(self):
        return self.points.shape[0]


def _path_params(length: float, epsilon: float) -> np.ndarray:
    # steps of exactly epsilon, the short remainder absorbed into the last one
    m = max(1, int(math.floor(length / epsilon + 1e-9)))
    t = np.arange(m + 1) * (epsilon / length)
    t[-1] = 1.0
    return t


def build_monotone_path(z_a, z_b, epsilon: float, allow_empty: bool = False) -> MonotonePath:
    """Points on the segment from ``z_a`` to ``z_b`` spaced ``epsilon`` apart in l1.

    Every step has l1 length in ``[epsilon, 2 epsilon)`` (a single shorter
    step when the whole segment is shorter than ``epsilon``).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    za = check_simplex(z_a)
    zb = check_simplex(z_b, za.size)
    length = float(np.abs(zb - za).sum())
    if length == 0:
        if allow_empty:
            return MonotonePath(za[None, :].copy(), epsilon)
        raise ValueError("path endpoints coincide")
    t = _path_params(length, epsilon)
    pts = za[None, :] + t[:, None] * (zb - za)[None, :]
    pts[-1] = zb
    return MonotonePath(pts, epsilon)


# ---------------------------------------------------------------------------
# aggregate g-variation
# ---------------------------------------------------------------------------


def line_derivative(model: ModelSpec, z_a, z_b, t) -> np.ndarray:
    """``d/dt g(z_a + t (z_b - z_a))`` at the times ``t``; shape ``(len(t), q)``."""
    za = np.asarray(z_a, dtype=float)
    dz = np.asarray(z_b, dtype=float) - za
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = za[None, :] + t[:, None] * dz[None, :]
    z = np.clip(z, 0.0, None)
    s = g_array(model, z)
    dx = -model.beta * model.interaction.d2(z) * dz[None, :]
    return s * (dx - np.sum(s * dx, axis=1, keepdims=True))


def _integrand_pieces(f, n_probe: int = 2049) -> list[float]:
    t = np.linspace(0.0, 1.0, n_probe)
    v = f(t)
    cuts = [0.0]
    for i in range(n_probe - 1):
        if v[i] == 0 and 0 < i:
            cuts.append(float(t[i]))
        elif v[i] * v[i + 1] < 0:
            cuts.append(brentq(lambda x: float(f(np.array([x]))[0]), t[i], t[i + 1], xtol=ROOT_TOL))
    cuts.append(1.0)
    return sorted(set(cuts))


def aggregate_variation_quadrature(model: ModelSpec, z_a, z_b, tol: float = 1e-10) -> float:
    """Sum over ``k`` of the integral of ``|d/dt g_k|`` along the straight segment.

    Interior sign changes of each derivative are located first, so every
    piece handed to the adaptive integrator is smooth.
    """
    za = check_simplex(z_a, model.q)
    zb = check_simplex(z_b, model.q)
    if np.array_equal(za, zb) or model.beta == 0:
        return 0.0
    total = 0.0
    for k in range(model.q):
        def fk(t, k=k):
            return line_derivative(model, za, zb, t)[:, k]

        cuts = _integrand_pieces(fk)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo:
                continue
            val, err = quad(lambda x: abs(float(fk(np.array([x]))[0])), lo, hi,
                            epsabs=tol * 1e-2, epsrel=tol, limit=200, full_output=0)
            if not np.isfinite(val) or err > max(tol, tol * abs(val)) * 10:
                raise RuntimeError(f"quadrature did not converge on [{lo}, {hi}] for k={k}: "
                                   f"value={val}, error estimate={err}")
            total += val
    return total


def _gcwp_line(q: int, r: float, beta: float, z: np.ndarray, t: np.ndarray):
    # z: (P, q) endpoints, t: (P, q) one time per coordinate k.  Returns g_k and the
    # sign-determining factor of d/dt g_k, both at the point z_p(t_pk).
    zt = (1.0 / q) * (1.0 - t[..., None]) + z[:, None, :] * t[..., None]  # (P, q, q)
    zt = np.clip(zt, 0.0, None)
    g = np.exp(beta * (zt ** (r - 1) - np.max(zt ** (r - 1), axis=-1, keepdims=True)))
    g /= g.sum(axis=-1, keepdims=True)
    dev = z - 1.0 / q  # (P, q)
    slope = zt ** (r - 2) if r != 2 else np.ones_like(zt)
    weighted = np.sum(g * dev[:, None, :] * slope, axis=-1)  # (P, q)
    bracket = np.diagonal(slope, axis1=1, axis2=2) * dev - weighted
    return np.diagonal(g, axis1=1, axis2=2), bracket


def closed_form_batch(q: int, r: float, beta: float, z: np.ndarray, iters: int = 60) -> np.ndarray:
    """Closed-form aggregate variation from the uniform point to each row of ``z``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    active = z > 1.0 / q
    lo = np.zeros(z.shape)
    hi = np.ones(z.shape)
    _, b_end = _gcwp_line(q, r, beta, z, hi)
    interior = active & (b_end < 0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        _, b_mid = _gcwp_line(q, r, beta, z, mid)
        up = b_mid > 0
        lo = np.where(interior & up, mid, lo)
        hi = np.where(interior & ~up, mid, hi)
        if np.all((hi - lo)[interior] <= ROOT_TOL):
            break
    t_star = np.where(interior, 0.5 * (lo + hi), 1.0)
    g_star, _ = _gcwp_line(q, r, beta, z, t_star)
    return 2.0 * np.sum(np.where(active, g_star - 1.0 / q, 0.0), axis=1)


def critical_times(model: ModelSpec, z) -> np.ndarray:
    """Critical time of ``t -> g_k(z(t))`` for each coordinate (1 when there is none)."""
    z = check_simplex(z, model.q)
    q, r = model.q, model.r
    active = z > 1.0 / q
    out = np.ones(q)
    for k in np.flatnonzero(active):
        def bracket(t, k=k):
            tt = np.full((1, q), t)
            return float(_gcwp_line(q, r, model.beta, z[None, :], tt)[1][0, k])

        if bracket(1.0) < 0:
            lo, hi = 0.0, 1.0
            while hi - lo > ROOT_TOL:
                mid = 0.5 * (lo + hi)
                if bracket(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            out[k] = 0.5 * (lo + hi)
    return out


def aggregate_variation_closed_form(model: ModelSpec, z) -> float:
    """Aggregate variation along the segment from the uniform point to ``z`` (GCWP).

    Equals ``2 sum_{k: z_k > 1/q} (g_k(z(t_k)) - 1/q)`` where ``t_k`` is the
    critical time of ``g_k`` along the segment.
    """
    if not model.is_gcwp:
        raise ValueError("closed form is available for the GCWP family only")
    z = check_simplex(z, model.q)
    if model.beta == 0:
        return 0.0
    return float(closed_form_batch(model.q, model.r, model.beta, z[None, :])[0])


# ---------------------------------------------------------------------------
# condition checkers
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    condition: str
    holds: bool
    sup_ratio: float
    argmax: list | None
    model: ModelSpec
    epsilon: float | None = None
    grid_resolution: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "condition": self.condition,
            "holds": self.holds,
            "sup_ratio": self.sup_ratio,
            "argmax": self.argmax,
            "beta": self.model.beta,
            "q": self.model.q,
            "r": self.model.r,
            "epsilon": self.epsilon,
            "grid_resolution": self.grid_resolution,
        }
        out.update(self.extra)
        return out


def _unique_equilibrium(model: ModelSpec, equilibrium: EquilibriumSolution | None) -> np.ndarray:
    if equilibrium is None:
        equilibrium = find_equilibria(model, grid_search=model.q <= 4)
    if not equilibrium.unique:
        raise ValueError(f"equilibrium is not unique at beta={model.beta}; conditions need a single macrostate")
    return equilibrium.z_beta.coords


def _uses_closed_form(model: ModelSpec, z_beta: np.ndarray) -> bool:
    return model.is_gcwp and np.allclose(z_beta, 1.0 / model.q, atol=1e-12, rtol=0)


def variation_ratio(model: ModelSpec, z, z_beta) -> float:
    """Straight-line aggregate variation from ``z_beta`` to ``z`` over ``||z - z_beta||_1``."""
    z = np.asarray(z, dtype=float)
    zb = np.asarray(z_beta, dtype=float)
    dist = float(np.abs(z - zb).sum())
    if _uses_closed_form(model, zb):
        d = float(closed_form_batch(model.q, model.r, model.beta, z[None, :])[0])
    else:
        d = aggregate_variation_quadrature(model, zb, z)
    return d / dist


def _simplex_from_free(x: np.ndarray) -> np.ndarray | None:
    z = np.append(x, 1.0 - x.sum())
    if np.any(z < 0):
        return None
    return z


def _refine_max(fun, z0: np.ndarray, z_beta: np.ndarray, scale: float) -> tuple[float, np.ndarray]:
    def neg(x):
        z = _simplex_from_free(x)
        if z is None or np.abs(z - z_beta).sum() < EXCLUSION_RADIUS:
            return np.inf
        return -fun(z)

    x0 = z0[:-1]
    simplex = np.vstack([x0] + [x0 + scale * e for e in np.eye(x0.size)])
    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000})
    z = _simplex_from_free(res.x)
    return -float(res.fun), z


def check_condition_contraction(model: ModelSpec, grid_resolution: int | None = None,
                                equilibrium: EquilibriumSolution | None = None,
                                refine: bool = True) -> ConditionReport:
    """Sup over the simplex of the aggregate variation to ``z_beta`` per unit l1 distance."""
    z_beta = _unique_equilibrium(model, equilibrium)
    res = grid_resolution or default_grid_resolution(model.q)
    if model.beta == 0:
        return ConditionReport("contraction", True, 0.0, None, model, None, res)
    pts = barycentric_grid(model.q, res)
    dist = np.abs(pts - z_beta).sum(axis=1)
    pts, dist = pts[dist >= EXCLUSION_RADIUS], dist[dist >= EXCLUSION_RADIUS]
    if _uses_closed_form(model, z_beta):
        ratios = np.concatenate([closed_form_batch(model.q, model.r, model.beta, chunk)
                                 for chunk in np.array_split(pts, max(1, pts.shape[0] // 4096))]) / dist
    else:
        ratios = np.array([aggregate_variation_quadrature(model, z_beta, z) for z in pts]) / dist
    i = int(np.argmax(ratios))
    sup, arg = float(ratios[i]), pts[i]
    if refine:
        val, z = _refine_max(lambda z: variation_ratio(model, z, z_beta), arg, z_beta, 1.0 / res)
        if z is not None and val > sup:
            sup, arg = val, z
    return ConditionReport("contraction", sup < 1.0, sup, [float(x) for x in arg], model, None, res)


def riemann_ratio(model: ModelSpec, z, z_beta, epsilon: float) -> float:
    """Discrete path sum along the epsilon-spaced path from ``z_beta`` to ``z``, per unit l1 distance."""
    return float(_riemann_batch(model, np.atleast_2d(np.asarray(z, float)), np.asarray(z_beta, float),
                                epsilon)[0])


def _riemann_batch(model: ModelSpec, pts: np.ndarray, z_beta: np.ndarray, epsilon: float) -> np.ndarray:
    dz = pts - z_beta[None, :]
    length = np.abs(dz).sum(axis=1)
    m = np.maximum(1, np.floor(length / epsilon + 1e-9).astype(np.int64))
    width = int(m.max())
    i = np.arange(width + 1)[None, :]
    t = np.minimum(i * (epsilon / length[:, None]), 1.0)
    t = np.where(i >= m[:, None], 1.0, t)
    dt = np.diff(t, axis=1)  # (P, width), zero past the end of each path
    starts = z_beta[None, None, :] + t[:, :-1, None] * dz[:, None, :]
    starts = np.clip(starts, 0.0, None)
    s = g_array(model, starts)
    dx = -model.beta * model.interaction.d2(starts) * dz[:, None, :]
    jv = s * (dx - np.sum(s * dx, axis=-1, keepdims=True))
    total = np.sum(dt * np.abs(jv).sum(axis=-1), axis=1)
    return total / length


def check_condition_riemann(model: ModelSpec, epsilon: float = 0.02, grid_resolution: int | None = None,
                            equilibrium: EquilibriumSolution | None = None) -> ConditionReport:
    """Sup over grid points of the discrete (Riemann-sum) path ratio."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    z_beta = _unique_equilibrium(model, equilibrium)
    res = grid_resolution or default_grid_resolution(model.q)
    pts = barycentric_grid(model.q, res)
    dist = np.abs(pts - z_beta).sum(axis=1)
    pts = pts[dist >= epsilon]
    if pts.shape[0] == 0 or model.beta == 0:
        return ConditionReport("riemann", True, 0.0, None, model, epsilon, res)
    ratios = np.concatenate([_riemann_batch(model, chunk, z_beta, epsilon)
                             for chunk in np.array_split(pts, max(1, pts.shape[0] // 1024))])
    i = int(np.argmax(ratios))
    sup = float(ratios[i])
    return ConditionReport("riemann", sup < 1.0, sup, [float(x) for x in pts[i]], model, epsilon, res)


def _tangent_directions(q: int, n_random: int, rng: np.random.Generator) -> np.ndarray:
    # l1-unit zero-sum directions: the extreme points (e_i - e_j)/2 plus random ones
    extreme = [(np.eye(q)[i] - np.eye(q)[j]) / 2 for i in range(q) for j in range(q) if i != j]
    rand = rng.standard_normal((n_random, q))
    rand -= rand.mean(axis=1, keepdims=True)
    rand /= np.abs(rand).sum(axis=1, keepdims=True)
    return np.vstack([np.array(extreme), rand])


def check_condition_local(model: ModelSpec, equilibrium: EquilibriumSolution | None = None,
                          radii=LOCAL_RADII, n_directions: int = 500, seed: int = 0) -> ConditionReport:
    """Estimate ``limsup ||g(z) - g(z_beta)||_1 / ||z - z_beta||_1`` as ``z -> z_beta``.

    The ratio is maximized over directions on shrinking l1 spheres and the
    per-radius maxima are extrapolated linearly to radius 0.
    """
    z_beta = _unique_equilibrium(model, equilibrium)
    q = model.q
    analytic = None
    if _uses_closed_form(model, z_beta):
        analytic = model.beta * (model.r - 1) / q ** (model.r - 1)
    if model.beta == 0:
        return ConditionReport("local", True, 0.0, None, model, extra={"local_ratio": 0.0, "analytic": analytic})
    dirs = _tangent_directions(q, n_directions, np.random.default_rng(seed))
    g0 = g_array(model, z_beta)
    maxima = []
    used = []
    for rad in radii:
        z = z_beta[None, :] + rad * dirs
        ok = np.all(z >= 0, axis=1)
        if not ok.any():
            continue
        diff = np.abs(g_array(model, z[ok]) - g0).sum(axis=1)
        maxima.append(float(np.max(diff / rad)))
        used.append(rad)
    used, maxima = np.array(used), np.array(maxima)
    if used.size >= 2:
        slope, intercept = np.polyfit(used, maxima, 1)
        estimate = float(intercept)
    else:
        estimate = float(maxima[-1])
    jac = g_jacobian(model, z_beta)
    extreme = dirs[: q * (q - 1)]
    jac_norm = float(np.max(np.abs(extreme @ jac.T).sum(axis=1)))
    extra = {"local_ratio": estimate, "analytic": analytic, "jacobian_norm": jac_norm,
             "radii": used.tolist(), "per_radius_max": maxima.tolist()}
    return ConditionReport("local", estimate < 1.0, estimate, [float(x) for x in z_beta], model, extra=extra)
