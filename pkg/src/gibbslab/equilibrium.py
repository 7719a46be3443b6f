"""Equilibrium macrostates and the critical inverse temperatures of the GCWP family."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar, root
from scipy.special import xlog1py

from .core import (
    ModelSpec,
    SimplexPoint,
    g_array,
    lattice_states,
    objective_array,
)

log = logging.getLogger(__name__)

MF_SCAN_POINTS = 10_000
U_TOL = 1e-12
BETA_TOL = 1e-8
PHASE_TOL = 1e-10


@dataclass(frozen=True)
class EquilibriumSolution:
    z_beta: SimplexPoint
    u: float
    min_value: float
    phase: str  # "unique" or "multiple"
    grid_value: float | None = None

    @property
    def unique(self) -> bool:
        return self.phase == "unique"

    def to_dict(self) -> dict:
        return {
            "z_beta": [float(x) for x in self.z_beta.coords],
            "u": self.u,
            "min_value": self.min_value,
            "phase": self.phase,
            "grid_value": self.grid_value,
        }


def _require_gcwp(model: ModelSpec) -> float:
    if not model.is_gcwp:
        raise ValueError("this operation is defined for the GCWP family only")
    return model.r


def _pow_diff(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """``(1+a)**p - (1+b)**p`` without losing precision for small ``a, b``."""
    with np.errstate(divide="ignore"):
        return np.expm1(p * np.log1p(a)) - np.expm1(p * np.log1p(b))


def _delta(q: int, r: float, beta: float, u):
    u = np.asarray(u, dtype=float)
    return -beta / q ** (r - 1) * _pow_diff((q - 1) * u, -u, r - 1)


def mean_field_delta(model: ModelSpec, u: float) -> float:
    """``-(beta/q^(r-1)) [(1+(q-1)u)^(r-1) - (1-u)^(r-1)]``."""
    r = _require_gcwp(model)
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    return float(_delta(model.q, r, model.beta, u))


def mean_field_rhs(model: ModelSpec, u):
    """Right-hand side ``(1 - e^D)/(1 + (q-1) e^D)`` of the mean-field equation."""
    r = _require_gcwp(model)
    d = _delta(model.q, r, model.beta, u)
    return -np.expm1(d) / (1.0 + (model.q - 1) * np.exp(d))


def _mf_excess(q: int, r: float, beta: float, u: np.ndarray) -> np.ndarray:
    # rhs(u)/u - 1; its positive roots are the nonzero mean-field solutions
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    zero = u == 0
    out[zero] = beta * (r - 1) / q ** (r - 1) - 1.0
    uu = u[~zero]
    d = _delta(q, r, beta, uu)
    out[~zero] = -np.expm1(d) / (uu * (1.0 + (q - 1) * np.exp(d))) - 1.0
    return out


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _solve_mf(q: int, r: float, beta: float, n_scan: int = MF_SCAN_POINTS) -> float:
    if beta == 0:
        return 0.0
    grid = np.linspace(0.0, 1.0, n_scan + 1)
    h = _mf_excess(q, r, beta, grid)

    def f(x):
        return float(_mf_excess(q, r, beta, np.array([x]))[0])

    for i in range(n_scan - 1, -1, -1):
        a, b = h[i], h[i + 1]
        if b == 0 and i + 1 < n_scan:
            return float(grid[i + 1])
        if (a > 0 > b) or (a < 0 < b):
            return _bisect(f, grid[i], grid[i + 1], U_TOL)
        if i == n_scan - 1 and a > 0 and b == 0:
            # rhs(1) - 1 underflowed: the root sits within rounding of 1
            return _bisect(f, grid[i], grid[i + 1], U_TOL)
    return 0.0


def solve_mean_field(model: ModelSpec) -> float:
    """Largest solution ``u`` in ``[0, 1)`` of the mean-field equation.

    A dense scan of ``rhs(u)/u - 1`` locates sign changes, which are then
    bisected.  Dividing by ``u`` keeps small positive roots visible near the
    continuous transition; ``u = 0`` is returned when no positive root exists.
    """
    r = _require_gcwp(model)
    return _solve_mf(model.q, r, model.beta)


def asymmetric_point(q: int, u: float, k: int = 0) -> np.ndarray:
    """``u e^k + (1-u)/q (1, ..., 1)``."""
    z = np.full(q, (1.0 - u) / q)
    z[k] += u
    return z


def objective_gap(q: int, r: float, beta: float, u: float) -> float:
    """``F(z(u)) - F(uniform)`` for ``F = R + beta H``, evaluated without cancellation."""
    a = (1.0 + (q - 1) * u) / q
    b = (1.0 - u) / q
    entropy = a * math.log1p((q - 1) * u) + (q - 1) * float(xlog1py(b, -u))
    with np.errstate(divide="ignore"):
        energy_bracket = np.expm1(r * np.log1p((q - 1) * u)) + (q - 1) * np.expm1(r * np.log1p(-u))
    return float(entropy - beta / (r * q ** r) * energy_bracket)


def barycentric_grid(q: int, resolution: int) -> np.ndarray:
    return lattice_states(resolution, q) / resolution


def default_grid_resolution(q: int) -> int:
    if q <= 3:
        return 200
    if q == 4:
        return 60
    raise ValueError(f"grid search over the simplex is not supported for q={q} > 4")


def _refine_minimum(model: ModelSpec, z0: np.ndarray) -> tuple[np.ndarray, float]:
    q = model.q

    def fun(z):
        return float(objective_array(model, np.clip(z, 0.0, 1.0)))

    def jac(z):
        z = np.clip(z, 1e-300, 1.0)
        return np.log(q * z) + 1.0 + model.beta * model.interaction.d1(z)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(fun, z0, jac=jac, method="SLSQP",
                       bounds=[(1e-15, 1.0)] * q,
                       constraints=[{"type": "eq", "fun": lambda z: z.sum() - 1.0,
                                     "jac": lambda z: np.ones_like(z)}],
                       options={"ftol": 1e-15, "maxiter": 500})
    z = np.clip(res.x, 0.0, None)
    z /= z.sum()
    # minimizers are fixed points of g; polish on that equation
    pol = root(lambda y: y - g_array(model, np.abs(y)), z, tol=1e-14)
    if pol.success:
        zp = np.abs(pol.x) / np.abs(pol.x).sum()
        if fun(zp) <= fun(z) + 1e-13:
            z = zp
    return z, fun(z)


def _grid_minimum(model: ModelSpec, resolution: int, n_starts: int = 1,
                  separation: float = 0.1) -> list[tuple[np.ndarray, float]]:
    pts = barycentric_grid(model.q, resolution)
    vals = objective_array(model, pts)
    order = np.argsort(vals, kind="stable")
    starts: list[np.ndarray] = []
    for i in order:
        if all(np.abs(pts[i] - s).sum() > separation for s in starts):
            starts.append(pts[i])
            if len(starts) >= n_starts:
                break
    return [_refine_minimum(model, s) for s in starts]


def find_equilibria(model: ModelSpec, grid_search: bool = True,
                    grid_resolution: int | None = None) -> EquilibriumSolution:
    """Global minimizer(s) of ``R(. | uniform) + beta H`` on the simplex.

    For GCWP models the uniform point is compared with the asymmetric
    candidate built from the largest mean-field solution; a barycentric grid
    search with local refinement cross-checks the result.  Other separable
    interactions rely on the grid search alone.
    """
    q = model.q
    if grid_search:
        resolution = grid_resolution or default_grid_resolution(q)
    if model.is_gcwp:
        r = model.r
        uniform = np.full(q, 1.0 / q)
        f_unif = float(objective_array(model, uniform))
        u = solve_mean_field(model)
        gap = objective_gap(q, r, model.beta, u) if u > 0 else 0.0
        if u == 0.0 or gap > PHASE_TOL:
            z, value, phase, u_out = uniform, f_unif, "unique", 0.0
        elif gap < -PHASE_TOL:
            z, value, phase, u_out = asymmetric_point(q, u), f_unif + gap, "multiple", float(u)
        else:
            z, value, phase, u_out = uniform, min(f_unif, f_unif + gap), "multiple", 0.0
        grid_value = None
        if grid_search:
            ((zg, grid_value),) = _grid_minimum(model, resolution)
            if grid_value < value - 1e-8:
                log.warning("grid search found a lower value %.17g than the mean-field candidate %.17g",
                            grid_value, value)
                z, value, phase = zg, grid_value, "unique"
                u_out = float(zg.max() - zg.min())
        return EquilibriumSolution(SimplexPoint(z / z.sum()), u_out, value, phase, grid_value)

    if not grid_search:
        raise ValueError("custom interactions need the grid search")
    minima = _grid_minimum(model, resolution, n_starts=6)
    best = min(v for _, v in minima)
    winners = [z for z, v in minima if v <= best + PHASE_TOL]
    distinct = [winners[0]]
    for z in winners[1:]:
        if all(np.abs(z - w).sum() > 1e-6 for w in distinct):
            distinct.append(z)
    z = min(minima, key=lambda t: t[1])[0]
    phase = "unique" if len(distinct) == 1 else "multiple"
    return EquilibriumSolution(SimplexPoint(z), float(z.max() - z.min()), float(best), phase, float(best))


# ---------------------------------------------------------------------------
# critical values
# ---------------------------------------------------------------------------


def local_ratio(q: int, r: float, beta: float) -> float:
    """Lipschitz ratio of ``g`` at the uniform point: ``beta (r-1) / q^(r-1)``."""
    return beta * (r - 1) / q ** (r - 1)


def local_threshold(q: int, r: float) -> float:
    """Inverse temperature at which the local ratio reaches 1."""
    return q ** (r - 1) / (r - 1)


def _ordered_wins(q: int, r: float, beta: float) -> bool:
    u = _solve_mf(q, r, beta)
    return u > 0 and objective_gap(q, r, beta, u) <= 0


def find_beta_c(q: int, r: float, tol: float = BETA_TOL) -> float:
    """Equilibrium critical value: where the ordered candidate's value drops to the uniform one."""
    if q < 2 or r < 2:
        raise ValueError("need q >= 2 and r >= 2")
    lo, hi = 0.0, 1.25 * local_threshold(q, r)
    while not _ordered_wins(q, r, hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _ordered_wins(q, r, mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _split_excess(q: int, r: float, beta: float, s: np.ndarray) -> np.ndarray:
    # (g_1(z) - z_1) / (z_1 - 1/q) on z = (1/q + s, rest split evenly)
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    zero = s == 0
    out[zero] = local_ratio(q, r, beta) - 1.0
    ss = s[~zero]
    expo = beta / q ** (r - 1) * _pow_diff(-q * ss / (q - 1), q * ss, r - 1)
    lift = -(q - 1) * np.expm1(expo) / (q * (1.0 + (q - 1) * np.exp(expo)))
    out[~zero] = (lift - ss) / ss
    return out


def rapid_mixing_margin(q: int, r: float, beta: float, n_grid: int = MF_SCAN_POINTS) -> tuple[float, float]:
    """Max over ``z_1 > 1/q`` of ``(g_1(z) - z_1)/(z_1 - 1/q)`` on the equal-split line.

    Returns ``(margin, z_1 at the max)``.  The equal split of the remaining
    mass maximizes ``g_1`` at fixed ``z_1`` because ``t -> exp(beta t^(r-1))``
    is convex, so this 1-D maximum decides the rapid-mixing predicate.
    """
    s_max = 1.0 - 1.0 / q
    s = np.linspace(0.0, s_max, n_grid + 1)
    vals = _split_excess(q, r, beta, s)
    i = int(np.argmax(vals))
    best, best_s = float(vals[i]), float(s[i])
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, n_grid)]
    if hi > lo:
        res = minimize_scalar(lambda x: -float(_split_excess(q, r, beta, np.array([x]))[0]),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        if -res.fun > best:
            best, best_s = float(-res.fun), float(res.x)
    return best, 1.0 / q + best_s


def rapid_mixing_margin_grid(q: int, r: float, beta: float, resolution: int) -> float:
    """Brute-force version of the margin over the full simplex grid (all ``k``)."""
    pts = barycentric_grid(q, resolution)
    model = ModelSpec.gcwp(q, r, beta)
    g = g_array(model, pts)
    excess = pts - 1.0 / q
    mask = excess > 1e-12
    return float(np.max(np.where(mask, (g - pts) / np.where(mask, excess, 1.0), -np.inf)))


def find_beta_s(q: int, r: float, tol: float = BETA_TOL) -> float:
    """Rapid-mixing threshold: sup of beta with ``g_k(z) < z_k`` whenever ``z_k > 1/q``."""
    if q < 2 or r < 2:
        raise ValueError("need q >= 2 and r >= 2")
    lo, hi = 0.0, local_threshold(q, r)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rapid_mixing_margin(q, r, mid)[0] < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
