"""Sample-based tests that can reject CAR.

Every test is one-sided. A ``no_evidence`` decision means the data are
consistent with CAR at the given level. It never means CAR has been
verified, because no data set can do that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .coarsening import CoarseningJoint
from .dist_core import Density, SpaceMismatchError
from .factorize import ProjectionOptions, _em_batch, fit_polar_ml
from .mechanisms import SampleBatch, current_status, parse_status_label

PRODUCT_BOUND = 1.0 / 16.0
MONOTONE_SLACK = 1e-10
MIN_BOOTSTRAP = 50
MAX_X = 200
# differences of two converged log-likelihoods below this are rounding noise
DIVERGENCE_FLOOR = 1e-9

REJECT = "reject_CAR"
NO_EVIDENCE = "no_evidence"


@dataclass
class TestReport:
    name: str
    statistic: float
    threshold: float
    n: int
    alpha: float
    calibration: dict
    extras: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    @property
    def decision(self) -> str:
        return REJECT if self.statistic > self.threshold else NO_EVIDENCE

    @property
    def rejects(self) -> bool:
        return self.decision == REJECT

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": float(self.statistic),
            "threshold": float(self.threshold),
            "decision": self.decision,
            "n": int(self.n),
            "alpha": float(self.alpha),
            "calibration": dict(self.calibration),
            **self.extras,
        }


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _indexed_counts(j: CoarseningJoint, samples: SampleBatch) -> np.ndarray:
    if samples.kind != "index":
        raise ValueError("this test needs samples indexed into the model's outcomes")
    if samples.n == 0:
        raise ValueError("sample batch is empty")
    r = samples.records
    if r.min() < 0 or r.max() >= len(j.x_space):
        raise SpaceMismatchError("sample indices fall outside the model's outcome space")
    return samples.counts(len(j.x_space))


def _status_grid(labels) -> int:
    """Grid size k if ``labels`` are exactly the current-status outcomes."""
    try:
        parsed = [parse_status_label(lab) for lab in labels]
    except ValueError:
        raise SpaceMismatchError("outcome labels are not current-status labels") from None
    k = max(c for c, _ in parsed)
    if list(labels) != list(current_status(k).x_space.labels):
        raise SpaceMismatchError("outcome labels do not form a current-status grid")
    return k


def _require_status_model(j: CoarseningJoint) -> None:
    """Right-censored grids share the labels, so compare the support pattern too."""
    k = _status_grid(j.x_space.labels)
    if not np.array_equal(j.table > 0, current_status(k).table > 0):
        raise SpaceMismatchError("model is not a current-status coarsening")


def product_cells(labels) -> tuple[np.ndarray, np.ndarray]:
    """Masks of ``A1 = {delta = 1, c <= k/2}`` and ``A2 = {delta = 0, c > k/2}``."""
    k = _status_grid(labels)
    if k % 2:
        raise ValueError(f"product-cell test needs an even grid, got k = {k}")
    parsed = [parse_status_label(lab) for lab in labels]
    a1 = np.array([d == 1 and c <= k // 2 for c, d in parsed])
    a2 = np.array([d == 0 and c > k // 2 for c, d in parsed])
    return a1, a2


def product_cell_population(p: Density) -> tuple[float, float]:
    """Cell probabilities ``(P(A1), P(A2))`` of a data density."""
    a1, a2 = product_cells(p.space.labels)
    mass = p.space.weights * p.values
    return float(mass[a1].sum()), float(mass[a2].sum())


def product_cell_test(j: CoarseningJoint, samples: SampleBatch, alpha: float = 0.05) -> TestReport:
    """Reject CAR when ``a1 * a2`` is significantly above 1/16.

    Under CAR the probability of ``delta = 1`` given ``C = c`` is a
    distribution function of c, which caps ``a1 * a2`` at 1/16.  The
    threshold adds a one-sided normal quantile times the delta-method
    standard error of the plug-in product.
    """
    _check_alpha(alpha)
    _require_status_model(j)
    a1_mask, a2_mask = product_cells(j.x_space.labels)
    counts = _indexed_counts(j, samples)
    n = samples.n
    a1 = counts[a1_mask].sum() / n
    a2 = counts[a2_mask].sum() / n
    var = (a2**2 * a1 * (1 - a1) + a1**2 * a2 * (1 - a2) - 2 * a1**2 * a2**2) / n
    sigma = float(np.sqrt(max(var, 0.0)))
    z = NormalDist().inv_cdf(1 - alpha)
    return TestReport(
        name="product-cell",
        statistic=float(a1 * a2),
        threshold=PRODUCT_BOUND + z * sigma,
        n=n,
        alpha=alpha,
        calibration={"kind": "closed_form"},
        extras={"a1": float(a1), "a2": float(a2), "sigma": sigma, "bound": PRODUCT_BOUND},
    )


def status_ratio(p: Density) -> tuple[np.ndarray, np.ndarray]:
    """Conditional probability of ``delta = 1`` at each cell c.

    Returns the cell indices with positive mass and the ratio there.
    """
    k = _status_grid(p.space.labels)
    mass = p.space.weights * p.values
    one = np.zeros(k)
    zero = np.zeros(k)
    for lab, m in zip(p.space.labels, mass):
        c, d = parse_status_label(lab)
        (one if d == 1 else zero)[c - 1] += m
    tot = one + zero
    cells = np.flatnonzero(tot > 0)
    return cells + 1, one[cells] / tot[cells]


def delta_monotone_check(p: Density, j: CoarseningJoint | None = None) -> tuple[bool, float]:
    """Is ``c -> P(delta = 1 | C = c)`` nondecreasing, as CAR requires?

    Returns ``(is_member, max_violation)`` where the violation is the
    largest decrease between consecutive cells that carry mass.  Passing
    the model ``j`` also checks that it is a current-status coarsening.
    """
    if j is not None:
        _require_status_model(j)
        if not p.space.same_as(j.x_space):
            raise SpaceMismatchError("density does not live on the model's X space")
    _, r = status_ratio(p)
    drops = -np.diff(r)
    worst = float(max(0.0, drops.max())) if drops.size else 0.0
    return worst <= MONOTONE_SLACK, worst


def monotone_density_test(samples: SampleBatch, bins: int = 20, range_: tuple = (0.0, 3.0),
                          alpha: float = 0.05) -> TestReport:
    """Reject a decreasing density when some adjacent bin count rises significantly.

    Each adjacent pair gives ``(n_{i+1} - n_i) / sqrt(n_i + n_{i+1})``; the
    largest is compared with a Bonferroni-corrected normal quantile.
    """
    _check_alpha(alpha)
    if samples.n == 0:
        raise ValueError("sample batch is empty")
    if samples.kind != "value":
        raise ValueError("monotone density test needs real-valued samples")
    if int(bins) != bins or bins < 2:
        raise ValueError("bins must be an integer >= 2")
    lo, hi = map(float, range_)
    if lo < 0 or not hi > lo:
        raise ValueError(f"range must satisfy 0 <= lo < hi, got {range_!r}")
    counts, edges = np.histogram(samples.records, bins=int(bins), range=(lo, hi))
    pair = counts[:-1] + counts[1:]
    rise = np.diff(counts).astype(float)
    z = np.divide(rise, np.sqrt(pair), out=np.zeros_like(rise), where=pair > 0)
    stat = float(z.max())
    return TestReport(
        name="monotone-density",
        statistic=stat,
        threshold=NormalDist().inv_cdf(1 - alpha / (bins - 1)),
        n=samples.n,
        alpha=alpha,
        calibration={"kind": "closed_form", "correction": "bonferroni", "comparisons": bins - 1},
        extras={
            "counts": [int(c) for c in counts],
            "edges": [float(e) for e in edges],
            "z": [float(v) for v in z],
            "worst_pair": int(np.argmax(z)),
        },
    )


def _smoothed_empirical(j: CoarseningJoint, counts: np.ndarray) -> np.ndarray:
    """Rows of empirical densities w.r.t. P0, mixed toward 1 with weight 1/(n + |X|)."""
    counts = np.atleast_2d(counts).astype(float)
    n = counts.sum(axis=1, keepdims=True)
    eps = 1.0 / (n + counts.shape[1])
    return (1 - eps) * counts / (n * j.p0) + eps


def _divergences(j: CoarseningJoint, F: np.ndarray, opts: ProjectionOptions):
    """Distance ``KL(f || best CAR law)`` for each row of F, plus the fitted pieces."""
    H, obj, _, conv, _ = _em_batch(j, F, np.ones((len(F), len(j.y_space))), opts)
    out, fits = [], []
    for f, kl in zip(F, obj):
        g = fit_polar_ml(j, f)
        d = float(kl - np.sum(j.p0 * f * np.log(g)))
        out.append(0.0 if d < DIVERGENCE_FLOOR else d)
        fits.append(g)
    return np.array(out), H, fits, conv


def kl_compat_test(j: CoarseningJoint, samples: SampleBatch, B: int = 500, alpha: float = 0.05,
                   seed: int = 0, opts: ProjectionOptions | None = None) -> TestReport:
    """Likelihood-ratio style test of CAR with parametric bootstrap calibration.

    The statistic is n times the KL divergence from the smoothed empirical
    density to the closest CAR law ``g * S(h)``.  The fitted CAR law is
    resampled B times with seeds derived from ``(seed, b)`` and the
    threshold is the empirical ``1 - alpha`` quantile of the replicates.
    """
    _check_alpha(alpha)
    if B < MIN_BOOTSTRAP:
        raise ValueError(f"B = {B} is under-calibrated; use at least {MIN_BOOTSTRAP}")
    if len(j.x_space) > MAX_X:
        raise ValueError(f"|X| = {len(j.x_space)} exceeds the supported {MAX_X}")
    counts = _indexed_counts(j, samples)
    n = samples.n
    if n < 10 * len(j.x_space):
        raise ValueError(f"need n >= 10|X| = {10 * len(j.x_space)} samples, got {n}")
    opts = opts or ProjectionOptions(tol=1e-12, kkt_tol=1e-8)

    f = _smoothed_empirical(j, counts)
    div, H, fits, conv = _divergences(j, f, opts)
    h = H[0] / j.y_space.integrate(H[0])
    law = j.p0 * fits[0] * j.forward(h)
    law = np.maximum(law, 0.0) / np.maximum(law, 0.0).sum()

    boot = np.empty((B, len(law)))
    for b in range(B):
        boot[b] = np.random.default_rng([seed, b]).multinomial(n, law)
    rep, *_ = _divergences(j, _smoothed_empirical(j, boot), opts)
    rep = n * rep
    return TestReport(
        name="kl-compat",
        statistic=float(n * div[0]),
        threshold=float(np.quantile(rep, 1 - alpha)),
        n=n,
        alpha=alpha,
        calibration={"kind": "bootstrap", "B": int(B), "seed": int(seed)},
        extras={
            "car_divergence": float(div[0]),
            "h_star": [float(v) for v in h],
            "g_fit": [float(v) for v in fits[0]],
            "converged": bool(conv[0]),
            "smoothing_eps": 1.0 / (n + len(j.x_space)),
            "bootstrap_mean": float(rep.mean()),
        },
    )
