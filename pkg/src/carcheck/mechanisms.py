"""Canonical coarsening mechanisms and seeded data-generating samplers.

Continuous mechanisms are discretized on ``k`` equal cells: Y and C are
uniform over cells ``1..k`` and comparisons such as ``Y <= C`` are made on
cell indices (ties count as ``Y <= C``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .coarsening import CoarseningJoint, _require_adjoint, build_joint
from .dist_core import BaseSpace, Density

MISSING_LABEL = "†"


def _status_label(c: int, delta: int) -> str:
    return f"{c},{delta}"


def parse_status_label(label: str) -> tuple[int, int]:
    c, d = label.split(",")
    return int(c), int(d)


def _check_grid(k: int) -> None:
    if int(k) != k or k < 2:
        raise ValueError(f"grid size must be an integer >= 2, got {k!r}")


def current_status(k: int) -> CoarseningJoint:
    """Discretized current status data ``X = (C, 1{Y <= C})``.

    Outcomes are ordered ``(1,1), (1,0), (2,1), (2,0), ..., (k,1)``; the
    outcome ``(k,0)`` has no mass and is left out.
    """
    _check_grid(k)
    labels = []
    for c in range(1, k + 1):
        labels.append(_status_label(c, 1))
        if c < k:
            labels.append(_status_label(c, 0))
    col = {lab: i for i, lab in enumerate(labels)}
    table = np.zeros((k, len(labels)))
    for y in range(1, k + 1):
        for c in range(1, k + 1):
            table[y - 1, col[_status_label(c, int(y <= c))]] += 1.0
    return build_joint(table, [str(y) for y in range(1, k + 1)], labels)


def right_censored(k: int) -> CoarseningJoint:
    """Discretized right censoring ``X = (min(Y, C), 1{Y <= C})``."""
    _check_grid(k)
    labels = []
    for i in range(1, k + 1):
        labels.append(_status_label(i, 1))
        if i < k:
            labels.append(_status_label(i, 0))
    col = {lab: i for i, lab in enumerate(labels)}
    table = np.zeros((k, len(labels)))
    for y in range(1, k + 1):
        for c in range(1, k + 1):
            x = _status_label(y, 1) if y <= c else _status_label(c, 0)
            table[y - 1, col[x]] += 1.0
    return build_joint(table, [str(y) for y in range(1, k + 1)], labels)


def missing_data(y_space: BaseSpace) -> CoarseningJoint:
    """Observe Y itself or a missingness marker, each with base probability 1/2."""
    if MISSING_LABEL in y_space.labels:
        raise ValueError(f"label {MISSING_LABEL!r} is reserved for the missing outcome")
    n = len(y_space)
    table = np.zeros((n, n + 1))
    table[np.arange(n), np.arange(n)] = 0.5 * y_space.weights
    table[:, n] = 0.5 * y_space.weights
    return build_joint(table, y_space.labels, list(y_space.labels) + [MISSING_LABEL])


def subset_labels(m: int) -> list[tuple[int, ...]]:
    """Nonempty subsets of ``{1..m}``, by size and then lexicographically."""
    return [s for r in range(1, m + 1) for s in combinations(range(1, m + 1), r)]


def subset_coarsening(m: int) -> CoarseningJoint:
    """Observe a random set containing Y; base mass ``2^(1-m)/m`` on each (y, A)."""
    if int(m) != m or not 2 <= m <= 12:
        raise ValueError(f"subset coarsening needs 2 <= m <= 12, got {m!r}")
    subsets = subset_labels(m)
    table = np.zeros((m, len(subsets)))
    for j, A in enumerate(subsets):
        for y in A:
            table[y - 1, j] = 2.0 ** (1 - m) / m
    labels = ["{" + ",".join(map(str, A)) + "}" for A in subsets]
    return build_joint(table, [str(y) for y in range(1, m + 1)], labels)


def product_coarsening(y_space: BaseSpace, x_space: BaseSpace) -> CoarseningJoint:
    """Independent base table ``Q0 x P0``: the data carry no information on Y."""
    return build_joint(np.outer(y_space.weights, x_space.weights), y_space.labels, x_space.labels)


def comonotone_current_status(k: int) -> np.ndarray:
    """Non-CAR joint over the ``current_status(k)`` spaces with ``a1 = a2 = 1/2``.

    C puts mass 1/2 uniformly on the lower half of the cells, where Y sits
    in the first cell (so the status is always 1), and mass 1/2 uniformly on
    cells ``k/2+1 .. k-1``, where Y sits in the last cell (status always 0).
    Needs an even ``k >= 4``.
    """
    if k < 4 or k % 2:
        raise ValueError("comonotone table needs an even grid size k >= 4")
    j = current_status(k)
    col = {lab: i for i, lab in enumerate(j.x_space.labels)}
    table = np.zeros((k, len(col)))
    half = k // 2
    for c in range(1, half + 1):
        table[0, col[_status_label(c, 1)]] = 0.5 / half
    upper = range(half + 1, k)
    for c in upper:
        table[k - 1, col[_status_label(c, 0)]] = 0.5 / len(upper)
    return table


@dataclass(frozen=True)
class GridSpec:
    """Binning and rate parameters for the multiplicative censoring sampler."""

    k: int = 20
    T: float = 3.0
    rate_y: float = 1.0
    rate_c: float = 1.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if not self.T > 0:
            raise ValueError("truncation T must be positive")
        if not (self.rate_y > 0 and self.rate_c > 0):
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class SampleBatch:
    records: np.ndarray
    seed: int
    kind: str = "index"  # "index" into an x_space, or "value" for real data
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.records)

    def counts(self, size: int) -> np.ndarray:
        if self.kind != "index":
            raise ValueError("counts are defined for indexed samples only")
        return np.bincount(self.records, minlength=size)


def _empty(seed: int, kind: str = "index") -> SampleBatch:
    dtype = int if kind == "index" else float
    return SampleBatch(np.zeros(0, dtype=dtype), seed, kind)


def sample_car(j: CoarseningJoint, h: Density, g, n: int, seed: int) -> SampleBatch:
    """Draw Y from ``h Q0``, then X given Y=y with probability ``∝ g[x] mu0[y,x]``."""
    g = _require_adjoint(j, g)
    if not h.space.same_as(j.y_space):
        raise ValueError("h does not live on the model's Y space")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return _empty(seed)
    rng = np.random.default_rng(seed)
    py = h.values * j.q0
    ys = rng.choice(len(py), size=n, p=py / py.sum())
    cond = j.table * g[None, :]
    cond /= cond.sum(axis=1, keepdims=True)
    xs = np.empty(n, dtype=int)
    for y in range(len(py)):
        idx = np.flatnonzero(ys == y)
        if idx.size:
            xs[idx] = rng.choice(cond.shape[1], size=idx.size, p=cond[y])
    return SampleBatch(xs, seed)


def sample_joint(table, n: int, seed: int, j: CoarseningJoint | None = None) -> SampleBatch:
    """Draw X from an arbitrary joint over Y x X (for non-CAR alternatives).

    When a model ``j`` is given the table must have its shape and may only
    put mass where the model's base table does.
    """
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("table must be a finite nonnegative matrix")
    if abs(t.sum() - 1.0) > 1e-9:
        raise ValueError(f"table sums to {t.sum()!r}, not 1")
    if j is not None:
        if t.shape != j.table.shape:
            raise ValueError("table shape does not match the model")
        if np.any((t > 0) & (j.table <= 0)):
            raise ValueError("table puts mass outside the model's support")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return _empty(seed)
    rng = np.random.default_rng(seed)
    px = t.sum(axis=0)
    xs = rng.choice(len(px), size=n, p=px / px.sum())
    return SampleBatch(xs, seed)


def multiplicative_sampler(spec: GridSpec, car: bool, n: int, seed: int) -> SampleBatch:
    """Real-valued data ``X = C * Y``.

    Under CAR, Y and C are independent exponentials, which forces a
    decreasing density for X.  The fixed non-CAR alternative draws
    ``C = 2 V / Y`` with ``V`` log-normal (sigma 0.1), so X piles up near 2.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return _empty(seed, "value")
    rng = np.random.default_rng(seed)
    y = rng.exponential(1.0 / spec.rate_y, size=n)
    if car:
        c = rng.exponential(1.0 / spec.rate_c, size=n)
    else:
        c = 2.0 * rng.lognormal(0.0, 0.1, size=n) / y
    return SampleBatch(c * y, seed, kind="value", meta={"car": bool(car)})
