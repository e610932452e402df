"""Finite probability spaces, densities against a base measure, and divergences.

Every density here is taken with respect to a strictly positive base
probability vector, so integrals are weighted sums ``sum(w * v)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEIGHT_TOL = 1e-12
DENSITY_TOL = 1e-10


class SpaceMismatchError(ValueError):
    """Two objects that must live on the same base space do not."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BaseSpace:
    """Finite support with strictly positive base weights summing to one."""

    labels: tuple
    weights: np.ndarray

    def __init__(self, labels: Sequence, weights: Sequence[float]):
        labels = tuple(str(l) for l in labels)
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) != len(labels):
            raise ValueError("labels and weights must have the same length")
        if len(w) == 0:
            raise ValueError("a base space needs at least one point")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("base weights must be strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"base weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, n: int, labels: Sequence | None = None) -> "BaseSpace":
        if labels is None:
            labels = [str(i + 1) for i in range(n)]
        return cls(labels, np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return len(self.labels)

    def same_as(self, other: "BaseSpace", tol: float = WEIGHT_TOL) -> bool:
        if self is other:
            return True
        return (
            self.labels == other.labels
            and np.max(np.abs(self.weights - other.weights)) <= tol
        )

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative coordinates integrating to one against ``space``."""

    space: BaseSpace
    values: np.ndarray

    def __init__(self, space: BaseSpace, values: Sequence[float]):
        v = np.asarray(values, dtype=float)
        if v.shape != (len(space),):
            raise ValueError(f"expected {len(space)} coordinates, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        mass = space.integrate(v)
        if abs(mass - 1.0) > DENSITY_TOL:
            raise ValueError(f"density integrates to {mass!r}, not 1")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Partition:
    """Indicator partition of ``range(size)`` into disjoint nonempty blocks."""

    blocks: tuple
    size: int

    def __init__(self, blocks: Sequence[Sequence[int]], size: int):
        blocks = tuple(tuple(int(i) for i in b) for b in blocks)
        seen: set[int] = set()
        for b in blocks:
            if not b:
                raise ValueError("partition blocks must be nonempty")
            for i in b:
                if i in seen:
                    raise ValueError(f"index {i} appears in more than one block")
                if not 0 <= i < size:
                    raise ValueError(f"index {i} outside support of size {size}")
                seen.add(i)
        if len(seen) != size:
            raise ValueError("partition blocks do not cover the support")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "size", size)

    @classmethod
    def singletons(cls, size: int) -> "Partition":
        return cls([[i] for i in range(size)], size)

    @classmethod
    def whole(cls, size: int) -> "Partition":
        return cls([list(range(size))], size)


def _check_same(f: Density, h: Density) -> None:
    if not f.space.same_as(h.space):
        raise SpaceMismatchError("densities live on different base spaces")


def make_density(raw: Sequence[float], space: BaseSpace) -> Density:
    """Rescale nonnegative ``raw`` so it integrates to one against ``space``."""
    v = np.asarray(raw, dtype=float)
    if v.shape != (len(space),):
        raise ValueError(f"expected {len(space)} coordinates, got shape {v.shape}")
    if np.any(v < 0):
        raise ValueError("raw coordinates must be nonnegative")
    mass = space.integrate(v)
    if not mass > 0:
        raise ValueError("raw coordinates have zero total mass")
    return Density(space, v / mass)


def kl_divergence(f: Density, h: Density) -> float:
    """KL(f || h) = sum w f log(f/h), with 0 log 0 = 0 and x log(x/0) = inf."""
    _check_same(f, h)
    return _kl(f.space.weights, f.values, h.values)


def _kl(w: np.ndarray, f: np.ndarray, h: np.ndarray) -> float:
    pos = f > 0
    if np.any(h[pos] <= 0):
        return float("inf")
    return float(np.sum(w[pos] * f[pos] * np.log(f[pos] / h[pos])))


def l1_distance(f: Density, h: Density) -> float:
    _check_same(f, h)
    return float(np.dot(f.space.weights, np.abs(f.values - h.values)))


def kl_partition(f: Density, h: Density, p: Partition) -> float:
    """Block-aggregated KL: sum over blocks of F_B log(F_B / H_B).

    ``F_B`` and ``H_B`` are the masses that ``f`` and ``h`` put on block B.
    Refining the partition can only increase the value; the singleton
    partition recovers :func:`kl_divergence`.
    """
    _check_same(f, h)
    if p.size != len(f):
        raise ValueError("partition size does not match the space")
    w = f.space.weights
    fm = np.array([np.dot(w[list(b)], f.values[list(b)]) for b in p.blocks])
    hm = np.array([np.dot(w[list(b)], h.values[list(b)]) for b in p.blocks])
    pos = fm > 0
    if np.any(hm[pos] <= 0):
        return float("inf")
    return float(np.sum(fm[pos] * np.log(fm[pos] / hm[pos])))


def sample_density(space: BaseSpace, seed: int) -> Density:
    """Strictly positive random density, deterministic in ``seed``.

    The induced probability vector ``w * values`` is drawn from the flat
    Dirichlet, so the expected density is the constant 1.
    """
    rng = np.random.default_rng(seed)
    n = len(space)
    p = rng.dirichlet(np.ones(n))
    # Dirichlet draws can underflow to exactly 0 in rare cases
    p = np.maximum(p, 1e-300)
    return make_density(p / space.weights, space)
