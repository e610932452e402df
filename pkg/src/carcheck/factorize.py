"""KL projection onto ``M = S(densities)`` and CAR factorization of data laws.

``kl_project`` minimizes ``KL(f || S(h))`` over densities h with the EM
(self-consistency) update ``h <- h * S*(f / S(h))``, which keeps every
iterate a density and never increases the objective.  At the optimum
``g = f / S(h*)`` satisfies ``S*(g) <= 1`` with equality on the support of
``h*``; when equality holds everywhere, ``f = g * S(h*)`` is an explicit CAR
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coarsening import CoarseningJoint
from .dist_core import Density, SpaceMismatchError

SLACK_TOL = 1e-6
SMOOTH_EPS = 1e-6


@dataclass(frozen=True)
class ProjectionOptions:
    tol: float = 1e-12
    max_iter: int = 200_000
    floor: float = 1e-12
    kkt_tol: float = 1e-12

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.floor < 1:
            raise ValueError("floor must lie in (0, 1)")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")


@dataclass
class ProjectionResult:
    h_star: Density
    kl_value: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


@dataclass
class FactorizationReport:
    h_star: Density
    k_star: Density
    g_star: np.ndarray
    kl_value: float
    slack: np.ndarray
    verdict: str  # "compatible" | "projection_residual"
    iterations: int
    converged: bool
    slack_tol: float = SLACK_TOL
    g_fit: np.ndarray | None = None
    car_divergence: float | None = None
    smoothing_eps: float = 0.0
    smoothing_l1: float = 0.0
    options: ProjectionOptions = field(default_factory=ProjectionOptions)

    @property
    def compatible(self) -> bool:
        return self.verdict == "compatible"

    def to_dict(self) -> dict:
        vec = lambda a: [float(v) for v in np.asarray(a)]
        return {
            "verdict": self.verdict,
            "kl_value": self.kl_value,
            "car_divergence": self.car_divergence,
            "h_star": vec(self.h_star.values),
            "k_star": vec(self.k_star.values),
            "g_star": vec(self.g_star),
            "g_fit": None if self.g_fit is None else vec(self.g_fit),
            "slack": vec(self.slack),
            "max_abs_slack": float(np.max(np.abs(self.slack))),
            "slack_tol": self.slack_tol,
            "iterations": self.iterations,
            "converged": self.converged,
            "smoothing_eps": self.smoothing_eps,
            "smoothing_l1": self.smoothing_l1,
            "tol": self.options.tol,
            "max_iter": self.options.max_iter,
            "y_labels": list(self.h_star.space.labels),
            "x_labels": list(self.k_star.space.labels),
        }


def _check_target(j: CoarseningJoint, f: Density) -> np.ndarray:
    if not f.space.same_as(j.x_space):
        raise SpaceMismatchError("target does not live on the model's X space")
    if np.any(f.values <= 0):
        raise ValueError("target density must be strictly positive; smooth it first")
    return np.asarray(f.values)


def smooth_target(f: Density, eps: float = SMOOTH_EPS) -> tuple[Density, float]:
    """Mix toward the constant density: ``(1 - eps) f + eps``.

    Returns the smoothed density and the L1(P0) change it caused.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    v = (1 - eps) * f.values + eps
    out = Density(f.space, v / f.space.integrate(v))
    return out, float(f.space.integrate(np.abs(out.values - f.values)))


def _objective(p0: np.ndarray, F: np.ndarray, K: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.sum(p0 * F * np.log(F / K), axis=-1)


def em_step(j: CoarseningJoint, f: Density, h: Density) -> Density:
    """One multiplicative update ``h'(y) = h(y) S*(f / S(h))(y)``."""
    if not h.space.same_as(j.y_space):
        raise SpaceMismatchError("h does not live on the model's Y space")
    if not f.space.same_as(j.x_space):
        raise SpaceMismatchError("f does not live on the model's X space")
    k = j.forward(h.values)
    fv = np.asarray(f.values)
    if np.any((k <= 0) & (fv > 0)):
        raise ZeroDivisionError("S(h) vanishes where the target has mass")
    ratio = np.divide(fv, k, out=np.zeros_like(fv), where=k > 0)
    return Density(j.y_space, h.values * j.adjoint(ratio))


def _em_batch(j: CoarseningJoint, F: np.ndarray, H: np.ndarray, opts: ProjectionOptions,
              record: bool = False):
    """Run EM on each row of ``F`` until it meets both stopping rules.

    A row stops once the last objective decrease is below ``opts.tol`` and
    the KKT residual ``max_y h(y) |S*(f/S(h))(y) - 1|`` (which is also the
    size of the next EM move) is below ``opts.kkt_tol``.
    """
    table, p0, q0 = j.table, j.p0, j.q0
    F = np.atleast_2d(F)
    H = np.array(np.atleast_2d(H), dtype=float)
    K = H @ table / p0
    obj = _objective(p0, F, K)
    drop = np.full(len(F), np.inf)
    iters = np.zeros(len(F), dtype=int)
    active = np.ones(len(F), dtype=bool)
    converged = np.zeros(len(F), dtype=bool)
    trace = [obj[0]] if record else []
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        U = ((F[idx] / K[idx]) @ table.T) / q0
        kkt = np.max(H[idx] * np.abs(U - 1.0), axis=1)
        done = (drop[idx] < opts.tol) & (kkt < opts.kkt_tol)
        capped = iters[idx] >= opts.max_iter
        converged[idx[done]] = True
        active[idx[done | capped]] = False
        keep = ~(done | capped)
        idx, U = idx[keep], U[keep]
        if idx.size == 0:
            break
        Ha = H[idx] * U
        Ka = Ha @ table / p0
        new = _objective(p0, F[idx], Ka)
        # the decrease sum w log(K'/K) is formed directly; differencing two
        # objective values would lose it to cancellation near the optimum
        drop[idx] = np.sum(p0 * F[idx] * np.log1p((Ka - K[idx]) / K[idx]), axis=-1)
        H[idx], K[idx], obj[idx] = Ha, Ka, new
        iters[idx] += 1
        if record and idx[0] == 0:
            trace.append(new[0])
    return H, obj, iters, converged, trace


def kl_project(j: CoarseningJoint, f: Density, opts: ProjectionOptions | None = None,
               h_init: Density | None = None, record: bool = False) -> ProjectionResult:
    """Minimize ``KL(f || S(h))`` over densities h on Y, starting from ``h = 1``.

    Stops when the objective drops by less than ``opts.tol`` and the KKT
    residual is below ``opts.kkt_tol``; hitting ``opts.max_iter`` first
    returns the last iterate with ``converged=False``.
    """
    opts = opts or ProjectionOptions()
    fv = _check_target(j, f)
    if h_init is None:
        h0 = np.ones(len(j.y_space))
    else:
        h0 = np.maximum(h_init.values, opts.floor)
        h0 = h0 / j.y_space.integrate(h0)
    H, obj, iters, conv, trace = _em_batch(j, fv, h0, opts, record)
    h = H[0] / j.y_space.integrate(H[0])
    return ProjectionResult(Density(j.y_space, h), float(obj[0]), int(iters[0]),
                            bool(conv[0]), trace)


def fit_polar_ml(j: CoarseningJoint, f: np.ndarray, tol: float = 1e-13,
                 max_iter: int = 200) -> np.ndarray:
    """Maximize ``sum_x P0 f log g`` over ``{g >= 0 : S*(g) = 1}``.

    Feasible-start Newton from ``g = 1`` on a strictly concave objective.
    Together with the projection this gives the maximum-likelihood CAR law
    ``g * S(h*)``, since the CAR log-likelihood splits into a term in h and
    a term in g.
    """
    w = j.p0 * np.asarray(f, dtype=float)
    A = j.s_star_matrix
    g = np.ones(len(w))
    for _ in range(max_iter):
        grad = -w / g
        hinv = g * g / w
        AH = A * hinv
        nu, *_ = np.linalg.lstsq(AH @ A.T, -AH @ grad, rcond=None)
        step = -hinv * (grad + A.T @ nu)
        dec = float(step @ (step / hinv))
        if dec / 2 < tol:
            break
        t = 1.0
        neg = step < 0
        if neg.any():
            t = min(1.0, 0.99 * float(np.min(-g[neg] / step[neg])))
        base = -np.sum(w * np.log(g))
        while -np.sum(w * np.log(g + t * step)) > base - 0.25 * t * dec and t > 1e-12:
            t *= 0.5
        g = g + t * step
    # remove rounding drift off the affine constraint
    g = g - np.linalg.lstsq(A, A @ g - 1.0, rcond=None)[0]
    return g


def car_factorize(j: CoarseningJoint, f: Density, opts: ProjectionOptions | None = None,
                  slack_tol: float = SLACK_TOL) -> FactorizationReport:
    """Project ``f`` onto M and read off ``g = f / S(h*)``.

    ``compatible`` certifies ``f = g * S(h*)`` with ``S*(g) = 1`` up to
    ``slack_tol``.  ``projection_residual`` reports the KKT slack
    ``1 - S*(g)`` where the factorization fails.  In both cases the
    maximum-likelihood CAR law and its divergence from ``f`` are included.
    """
    opts = opts or ProjectionOptions()
    proj = kl_project(j, f, opts)
    fv = np.asarray(f.values)
    k = j.forward(proj.h_star.values)
    k_star = Density(j.x_space, k / j.x_space.integrate(k))
    g = fv / k_star.values
    slack = 1.0 - j.adjoint(g)
    verdict = "compatible" if np.max(np.abs(slack)) <= slack_tol else "projection_residual"
    g_fit = fit_polar_ml(j, fv)
    car_div = max(0.0, proj.kl_value - float(np.sum(j.p0 * fv * np.log(g_fit))))
    return FactorizationReport(
        h_star=proj.h_star,
        k_star=k_star,
        g_star=g,
        kl_value=proj.kl_value,
        slack=slack,
        verdict=verdict,
        iterations=proj.iterations,
        converged=proj.converged,
        slack_tol=slack_tol,
        g_fit=g_fit,
        car_divergence=car_div,
        options=opts,
    )
