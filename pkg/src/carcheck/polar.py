"""Polar and bipolar geometry of the image set ``M = S(densities on Y)``.

On finite spaces the polar ``M° = {g >= 0 : S*(g) = 1}`` and the bipolar
``M°° = span(M) ∩ {densities on X}`` are polytopes.  CAR is untestable
exactly when ``M°° = M`` (closure is automatic here), i.e. when every
nonnegative ``S(h)`` with ``<h, 1> = 1`` already has a nonnegative preimage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .coarsening import CoarseningJoint
from .dist_core import Density, SpaceMismatchError, make_density
from .simplex import DEFAULT_TOL, linear_feasible, solve_lp

RANK_TOL = 1e-10
SPAN_TOL = 1e-9
EXACT_MAX_X = 20


class CertificateError(ValueError):
    """Inputs do not admit the requested certificate."""


def _vec(a) -> list | None:
    return None if a is None else [float(v) for v in np.asarray(a)]


@dataclass
class PolarDescription:
    span_basis: np.ndarray  # columns: orthonormal basis of span(M) in R^|X|
    affine_dim_M_polar: int
    interior_point: np.ndarray | None = None
    feasible: bool = True

    @property
    def span_dim(self) -> int:
        return self.span_basis.shape[1]

    def to_dict(self) -> dict:
        return {
            "span_dim": self.span_dim,
            "span_basis": [_vec(c) for c in self.span_basis.T],
            "affine_dim_M_polar": self.affine_dim_M_polar,
            "interior_point": _vec(self.interior_point),
            "feasible": self.feasible,
        }


@dataclass
class MembershipCert:
    """Inside: ``S(witness_h) = target``.  Outside: for every ``k`` in M,
    ``<k, separator>_P0 <= level`` while ``<target, separator>_P0 > level``."""

    verdict: str  # "inside" | "outside"
    witness_h: Density | None = None
    separator: np.ndarray | None = None
    level: float | None = None
    target_value: float | None = None
    residual: float | None = None
    tol: float = DEFAULT_TOL

    @property
    def inside(self) -> bool:
        return self.verdict == "inside"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness_h": None if self.witness_h is None else _vec(self.witness_h.values),
            "separator": _vec(self.separator),
            "level": self.level,
            "target_value": self.target_value,
            "residual": self.residual,
            "tol": self.tol,
        }


@dataclass
class BipolarVerdict:
    equal: bool
    mode: str
    witness: Density | None = None
    kl_gap: float | None = None
    distance: float | None = None
    claim: str = ""
    points_checked: int = 0
    outside_count: int = 0
    directions: int | None = None
    seed: int | None = None
    tol: float = DEFAULT_TOL
    membership: MembershipCert | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "equal": self.equal,
            "mode": self.mode,
            "claim": self.claim,
            "witness": None if self.witness is None else _vec(self.witness.values),
            "witness_labels": None if self.witness is None else list(self.witness.space.labels),
            "kl_gap": self.kl_gap,
            "l1_distance_to_M": self.distance,
            "points_checked": self.points_checked,
            "outside_count": self.outside_count,
            "directions": self.directions,
            "seed": self.seed,
            "tol": self.tol,
            "membership": None if self.membership is None else self.membership.to_dict(),
            **self.extra,
        }


def _span(j: CoarseningJoint) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of span(M) and of its orthogonal complement."""
    S = j.s_matrix
    U, sv, _ = np.linalg.svd(S, full_matrices=True)
    r = int(np.sum(sv > RANK_TOL * max(1.0, sv[0])))
    return U[:, :r], U[:, r:]


def bipolar_basis(j: CoarseningJoint) -> PolarDescription:
    """Span part of the description: ``M°° = span ∩ densities``."""
    B, _ = _span(j)
    return PolarDescription(B, len(j.x_space) - B.shape[1])


def polar_M(j: CoarseningJoint, tol: float = DEFAULT_TOL) -> PolarDescription:
    """Describe ``M° = {g >= 0 : S*(g) = 1}`` and find a most-interior point.

    The interior point maximizes ``min_x g[x]`` over the polar by LP.
    """
    desc = bipolar_basis(j)
    nx = len(j.x_space)
    A_star = j.s_star_matrix
    ny = A_star.shape[0]
    # variables: g (nx), t (1), s (nx);  S* g = 1,  g - t - s = 0
    A = np.zeros((ny + nx, 2 * nx + 1))
    A[:ny, :nx] = A_star
    A[ny:, :nx] = np.eye(nx)
    A[ny:, nx] = -1.0
    A[ny:, nx + 1 :] = -np.eye(nx)
    b = np.concatenate([np.ones(ny), np.zeros(nx)])
    c = np.zeros(2 * nx + 1)
    c[nx] = -1.0
    res = solve_lp(c, A, b, tol=tol)
    if res.status == "optimal" and res.x[nx] > tol:
        g = res.x[:nx]
        if np.max(np.abs(j.adjoint(g) - 1.0)) < SPAN_TOL and g.min() > 0:
            desc.interior_point = g
    desc.feasible = True  # g = 1 always solves S*(g) = 1
    return desc


def sample_polar_point(j: CoarseningJoint, seed: int, spread: float = 0.9) -> np.ndarray:
    """Random strictly positive ``g`` with ``S*(g) = 1``.

    Moves from ``g = 1`` along a random direction of the null space of ``S*``
    by at most ``spread`` in sup-norm, so ``min g >= 1 - spread``.
    """
    rng = np.random.default_rng(seed)
    A = j.s_star_matrix
    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    r = int(np.sum(sv > RANK_TOL * max(1.0, sv[0])))
    null = Vt[r:].T
    g = np.ones(len(j.x_space))
    if null.shape[1]:
        phi = null @ rng.standard_normal(null.shape[1])
        g = g + rng.uniform(0, spread) * phi / np.max(np.abs(phi))
    return g


def _target(j: CoarseningJoint, k) -> np.ndarray:
    if isinstance(k, Density):
        if not k.space.same_as(j.x_space):
            raise SpaceMismatchError("target does not live on the model's X space")
        return np.asarray(k.values)
    arr = np.asarray(k, dtype=float)
    if arr.shape != (len(j.x_space),):
        raise SpaceMismatchError("target has the wrong number of coordinates")
    return arr


def membership_M(j: CoarseningJoint, k, tol: float = DEFAULT_TOL) -> MembershipCert:
    """Decide ``k ∈ M`` by LP feasibility of ``S h = k, h >= 0``."""
    target = _target(j, k)
    S = j.s_matrix
    res = linear_feasible(S, target, tol=tol)
    if res.feasible:
        h = make_density(res.x, j.y_space)
        residual = float(np.max(np.abs(j.forward(h.values) - target)))
        if residual > 1e-8:
            raise CertificateError(f"preimage reproduces the target only to {residual:.2g}")
        return MembershipCert("inside", witness_h=h, residual=residual, tol=tol)
    y = res.dual / np.max(np.abs(res.dual))
    # <S(h), y/P0>_P0 = (y S) h, maximized over densities at a vertex e_y/Q0(y)
    ys = y @ S
    level = float(np.max(ys / j.q0))
    phi = y / j.p0
    value = float(y @ target)
    if not value > level:
        raise CertificateError("separator does not separate at this tolerance")
    return MembershipCert("outside", separator=phi, level=level, target_value=value, tol=tol)


def l1_distance_to_M(j: CoarseningJoint, k, tol: float = DEFAULT_TOL) -> tuple[float, Density]:
    """``min_h ||k - S(h)||_{L1(P0)}`` over densities h, with the minimizer."""
    target = _target(j, k)
    S = j.s_matrix
    nx, ny = S.shape
    # variables: h (ny), u (nx), v (nx);  S h + u - v = k,  Q0.h = 1
    A = np.zeros((nx + 1, ny + 2 * nx))
    A[:nx, :ny] = S
    A[:nx, ny : ny + nx] = np.eye(nx)
    A[:nx, ny + nx :] = -np.eye(nx)
    A[nx, :ny] = j.q0
    b = np.concatenate([target, [1.0]])
    c = np.concatenate([np.zeros(ny), j.p0, j.p0])
    res = solve_lp(c, A, b, tol=tol)
    if res.status != "optimal":
        raise CertificateError(f"distance LP ended with status {res.status}")
    h = make_density(res.x[:ny], j.y_space)
    return max(0.0, float(res.objective)), h


def in_span_residual(j: CoarseningJoint, k) -> float:
    B, _ = _span(j)
    target = _target(j, k)
    return float(np.max(np.abs(target - B @ (B.T @ target))))


def kl_gap_certificate(j: CoarseningJoint, witness, tol: float = DEFAULT_TOL) -> float:
    """Lower bound ``eps = dist_1(witness, M)^2 / 4``.

    Every CAR data law ``f = g S(h)`` then has ``KL(witness || f) > eps``.
    """
    target = _target(j, witness)
    if in_span_residual(j, target) > SPAN_TOL:
        raise CertificateError("witness is not in the span of M")
    if np.any(target < -tol) or abs(j.x_space.integrate(target) - 1.0) > 1e-10:
        raise CertificateError("witness is not a density")
    d, _ = l1_distance_to_M(j, target, tol)
    if d <= 10 * tol:
        raise CertificateError("witness lies in M; there is no gap")
    return d * d / 4.0


def _vertices(j: CoarseningJoint, B: np.ndarray, chunk: int = 20000) -> np.ndarray:
    """Vertices of ``{k = B z : k >= 0, P0.k = 1}`` by zero-set enumeration."""
    nx, r = B.shape
    w = j.p0 @ B
    rhs = np.zeros(r)
    rhs[-1] = 1.0
    found = []
    combos = combinations(range(nx), r - 1)
    while True:
        block = [c for _, c in zip(range(chunk), combos)]
        if not block:
            break
        Z = np.array(block, dtype=int).reshape(len(block), r - 1)
        M = np.empty((len(block), r, r))
        M[:, : r - 1, :] = B[Z]
        M[:, r - 1, :] = w
        sv = np.linalg.svd(M, compute_uv=False)
        ok = sv[:, -1] > 1e-10 * np.maximum(sv[:, 0], 1.0)
        if not ok.any():
            continue
        z = np.linalg.solve(M[ok], np.broadcast_to(rhs, (int(ok.sum()), r))[..., None])[..., 0]
        K = z @ B.T
        good = np.all(K >= -1e-10, axis=1)
        found.append(K[good])
    if not found:
        return np.zeros((0, nx))
    K = np.clip(np.vstack(found), 0.0, None)
    K /= (K @ j.p0)[:, None]
    _, idx = np.unique(np.round(K, 9), axis=0, return_index=True)
    return K[np.sort(idx)]


def _direction_maximizer(j, B, N, c, tol) -> np.ndarray | None:
    nx = B.shape[0]
    A = np.vstack([N.T, j.p0[None, :]]) if N.shape[1] else j.p0[None, :]
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    res = solve_lp(-c, A, b, tol=tol)
    if res.status != "optimal":
        return None
    k = res.x
    return k / (k @ j.p0)


def check_extension(
    j: CoarseningJoint,
    mode: str = "exact",
    directions: int = 1000,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> BipolarVerdict:
    """Decide whether ``M°° = M``, i.e. whether every nonnegative image extends.

    ``exact`` enumerates all vertices of ``M°°`` (``|X| <= 20``).
    ``randomized`` maximizes random linear functionals over ``M°°`` and
    tests the maximizers; it can only prove inequality.
    """
    B, N = _span(j)
    nx, r = B.shape
    if mode == "exact":
        if nx > EXACT_MAX_X:
            raise ValueError(f"exact mode supports |X| <= {EXACT_MAX_X}, got {nx}")
        points = _vertices(j, B)
        extra = {"vertex_count": int(len(points)), "support_sets": comb(nx, r - 1)}
    elif mode == "randomized":
        if directions < 1:
            raise ValueError("randomized mode needs at least one direction")
        pts = []
        for i in range(directions):
            rng = np.random.default_rng([seed, i])
            z = rng.standard_normal(r)
            k = _direction_maximizer(j, B, N, B @ (z / np.linalg.norm(z)), tol)
            if k is not None:
                pts.append(k)
        points = np.array(pts).reshape(-1, nx)
        extra = {}
    else:
        raise ValueError(f"unknown mode {mode!r}")

    outside = []
    for k in points:
        cert = membership_M(j, k, tol)
        if not cert.inside:
            outside.append((k, cert))

    verdict = BipolarVerdict(
        equal=not outside,
        mode=mode,
        points_checked=int(len(points)),
        outside_count=len(outside),
        directions=directions if mode == "randomized" else None,
        seed=seed if mode == "randomized" else None,
        tol=tol,
        extra=extra,
    )
    if not outside:
        verdict.claim = (
            "bipolar equals M: CAR is not testable for this coarsening"
            if mode == "exact"
            else f"no counterexample found in {directions} directions"
        )
        return verdict

    best = None
    for k, cert in outside:
        d, _ = l1_distance_to_M(j, k, tol)
        if best is None or d > best[0]:
            best = (d, k, cert)
    d, k, cert = best
    verdict.witness = Density(j.x_space, k / j.x_space.integrate(k))
    verdict.distance = d
    verdict.kl_gap = d * d / 4.0
    verdict.membership = cert
    # the witness lies in span(M), so it is S of a signed vector on Y
    pre, *_ = np.linalg.lstsq(j.s_matrix, verdict.witness.values, rcond=None)
    verdict.extra["witness_preimage"] = _vec(pre)
    verdict.claim = (
        "bipolar strictly contains M: every CAR law is at KL distance "
        "above kl_gap from the witness"
    )
    return verdict
