"""Coarsening operators built from a joint base table over Y x X.

The joint table ``mu0[y, x]`` is the only stored object.  The forward map
``S(h)(x) = E[h(Y) | X = x]`` and its adjoint ``S*(g)(y) = E[g(X) | Y = y]``
are computed from it on demand.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dist_core import (
    WEIGHT_TOL,
    BaseSpace,
    Density,
    SpaceMismatchError,
    _frozen,
    sample_density,
)

ADJOINT_TOL = 1e-8


class AdjointConstraintError(ValueError):
    """A nuisance factor ``g`` does not satisfy ``S*(g) = 1``."""


@dataclass(frozen=True, eq=False)
class CoarseningJoint:
    y_space: BaseSpace
    x_space: BaseSpace
    table: np.ndarray

    def __post_init__(self):
        t = self.table
        if t.shape != (len(self.y_space), len(self.x_space)):
            raise ValueError("table shape does not match the spaces")
        if abs(t.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("joint table does not sum to 1")
        if np.max(np.abs(t.sum(axis=1) - self.y_space.weights)) > WEIGHT_TOL:
            raise ValueError("row sums do not match the Y weights")
        if np.max(np.abs(t.sum(axis=0) - self.x_space.weights)) > WEIGHT_TOL:
            raise ValueError("column sums do not match the X weights")

    @property
    def q0(self) -> np.ndarray:
        return self.y_space.weights

    @property
    def p0(self) -> np.ndarray:
        return self.x_space.weights

    @property
    def s_matrix(self) -> np.ndarray:
        """``S`` as an |X| x |Y| matrix acting on density coordinates."""
        return self.table.T / self.p0[:, None]

    @property
    def s_star_matrix(self) -> np.ndarray:
        """``S*`` as a |Y| x |X| matrix acting on coordinates over X."""
        return self.table / self.q0[:, None]

    def forward(self, h) -> np.ndarray:
        """Raw ``S`` on a coordinate vector (no density checks)."""
        return (self.table.T @ np.asarray(h, dtype=float)) / self.p0

    def adjoint(self, g) -> np.ndarray:
        """Raw ``S*`` on a coordinate vector (no sign checks)."""
        return (self.table @ np.asarray(g, dtype=float)) / self.q0


@dataclass(frozen=True)
class OperatorCheck:
    s_one_ok: bool
    s_star_one_ok: bool
    positivity_ok: bool
    norm_estimate: float
    max_defect: float

    @property
    def ok(self) -> bool:
        return self.s_one_ok and self.s_star_one_ok and self.positivity_ok

    def to_dict(self) -> dict:
        return asdict(self)


def build_joint(table, y_labels: Sequence, x_labels: Sequence) -> CoarseningJoint:
    """Normalize a nonnegative mass table and derive both marginals from it."""
    t = np.array(table, dtype=float)
    if t.ndim != 2 or t.shape != (len(y_labels), len(x_labels)):
        raise ValueError(
            f"table shape {t.shape} does not match {len(y_labels)} x {len(x_labels)} labels"
        )
    if not np.all(np.isfinite(t)):
        raise ValueError("table entries must be finite")
    if np.any(t < 0):
        raise ValueError("table entries must be nonnegative")
    total = t.sum()
    if not total > 0:
        raise ValueError("table has zero total mass")
    t = t / total
    rows = t.sum(axis=1)
    cols = t.sum(axis=0)
    if np.any(rows <= 0):
        bad = [str(y_labels[i]) for i in np.flatnonzero(rows <= 0)]
        raise ValueError(f"Y points with no base mass: {bad}")
    if np.any(cols <= 0):
        bad = [str(x_labels[i]) for i in np.flatnonzero(cols <= 0)]
        raise ValueError(f"X points with no base mass: {bad}")
    # marginals are renormalized so the BaseSpace sum check sees exact rounding
    y_space = BaseSpace(y_labels, rows / rows.sum())
    x_space = BaseSpace(x_labels, cols / cols.sum())
    return CoarseningJoint(y_space, x_space, _frozen(t))


def _require_space(space: BaseSpace, expected: BaseSpace, what: str) -> None:
    if not space.same_as(expected):
        raise SpaceMismatchError(f"{what} does not live on the expected space")


def apply_S(j: CoarseningJoint, h: Density) -> Density:
    """Forward coarsening ``S(h)(x) = sum_y mu0[y,x] h[y] / P0[x]``."""
    _require_space(h.space, j.y_space, "h")
    return Density(j.x_space, j.forward(h.values))


def apply_S_star(j: CoarseningJoint, g) -> np.ndarray:
    """Adjoint ``S*(g)(y) = sum_x mu0[y,x] g[x] / Q0[y]`` for ``g >= 0``."""
    g = _coords(g, j.x_space, "g")
    if np.any(g < 0):
        raise ValueError("S* is applied to nonnegative coordinates only")
    return j.adjoint(g)


def _coords(v, space: BaseSpace, what: str) -> np.ndarray:
    if isinstance(v, Density):
        _require_space(v.space, space, what)
        return np.asarray(v.values)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (len(space),):
        raise SpaceMismatchError(
            f"{what} has {arr.size} coordinates, expected {len(space)}"
        )
    return arr


def adjoint_defect(j: CoarseningJoint, g) -> float:
    """``max |S*(g) - 1|``."""
    return float(np.max(np.abs(j.adjoint(_coords(g, j.x_space, "g")) - 1.0)))


def _require_adjoint(j: CoarseningJoint, g, tol: float = ADJOINT_TOL) -> np.ndarray:
    g = _coords(g, j.x_space, "g")
    if np.any(g < 0):
        raise ValueError("g must be nonnegative")
    defect = adjoint_defect(j, g)
    if defect > tol:
        raise AdjointConstraintError(f"||S*(g) - 1||_inf = {defect:.3g} exceeds {tol:g}")
    return g


def validate_coarsening(j: CoarseningJoint, trials: int = 100, seed: int = 0) -> OperatorCheck:
    """Check ``S(1) = 1``, ``S*(1) = 1``, positivity and unit operator norm.

    The norm estimate is the largest ``||S(h)||_1 / ||h||_1`` seen over
    ``trials`` random densities (and ``h = 1``); it is exactly 1 for a
    valid coarsening.
    """
    ones_x = np.ones(len(j.x_space))
    ones_y = np.ones(len(j.y_space))
    d_s = float(np.max(np.abs(j.forward(ones_y) - 1.0)))
    d_star = float(np.max(np.abs(j.adjoint(ones_x) - 1.0)))
    defects = [d_s, d_star]

    rng = np.random.default_rng(seed)
    positivity_ok = True
    norm = j.x_space.integrate(np.abs(j.forward(ones_y)))
    for _ in range(trials):
        h = sample_density(j.y_space, int(rng.integers(2**62)))
        k = j.forward(h.values)
        neg = float(max(0.0, -k.min()))
        positivity_ok &= neg == 0.0
        ratio = j.x_space.integrate(np.abs(k)) / j.y_space.integrate(h.values)
        norm = max(norm, ratio)
        defects += [neg, abs(ratio - 1.0)]
    return OperatorCheck(
        s_one_ok=d_s <= WEIGHT_TOL,
        s_star_one_ok=d_star <= WEIGHT_TOL,
        positivity_ok=bool(positivity_ok),
        norm_estimate=float(norm),
        max_defect=float(max(defects)),
    )


def car_data_density(j: CoarseningJoint, h: Density, g) -> Density:
    """Data density ``g * S(h)`` w.r.t. P0 for a CAR pair (h, g)."""
    g = _require_adjoint(j, g)
    k = apply_S(j, h)
    v = g * k.values
    mass = j.x_space.integrate(v)
    # mass = <h, S*(g)> which is 1 up to the adjoint tolerance; absorb it
    return Density(j.x_space, v / mass)


def rebase(j: CoarseningJoint, h0: Density, g0) -> CoarseningJoint:
    """Reweight the base joint to ``g0[x] h0[y] mu0[y,x]``.

    The rebased joint is itself CAR for ``j``; a law is CAR for one base
    exactly when it is CAR for the other.
    """
    _require_space(h0.space, j.y_space, "h0")
    g0 = _require_adjoint(j, g0)
    t = g0[None, :] * h0.values[:, None] * j.table
    if np.any(t.sum(axis=1) <= 0) or np.any(t.sum(axis=0) <= 0):
        raise ValueError("rebasing leaves a Y or X point with no mass")
    return build_joint(t, j.y_space.labels, j.x_space.labels)
