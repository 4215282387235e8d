"""Bayesian split-probability inference for gated partition search.

The prior is a per-depth linear map from q-index to the cumulative area
fraction of prime blocks shallower than that depth; the conditional split
probability falls out of consecutive ratios of those fractions. Likelihoods
come from online occurrence tables of (anchor depth, remote depth) pairs,
Laplace-smoothed, with importance-weighted updates so that the occasional
full search forced on low-posterior blocks keeps the tables unbiased.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

EPSILON = 1e-3
NUM_DEPTHS = 4      # gated block depths 0..3
DEGREE_BINS = 5     # split degrees 0..4


class InsufficientData(ValueError):
    """Fewer than two calibration samples."""


class DegenerateFit(ValueError):
    """All calibration samples share one q-index; no line can be fit."""


def _clamp(value, lo=EPSILON, hi=1.0 - EPSILON):
    return min(max(value, lo), hi)


@dataclass(frozen=True)
class PriorModel:
    """Per-depth lines mapping q-index to cumulative shallow-area fraction.

    ``slopes``/``intercepts`` have one entry per depth 1..4. Evaluation
    clamps each line into [eps, 1-eps] and then projects upward so the four
    values are non-decreasing in depth (they estimate a CDF over depth).
    """

    slopes: tuple
    intercepts: tuple
    eps: float = EPSILON

    def evaluate(self, q_index: float) -> np.ndarray:
        raw = np.array(self.slopes) * q_index + np.array(self.intercepts)
        clamped = np.clip(raw, self.eps, 1.0 - self.eps)
        return np.maximum.accumulate(clamped)

    def a(self, d: int, q_index: float) -> float:
        """Cumulative fraction of area in prime blocks with depth < d."""
        if not 1 <= d <= NUM_DEPTHS:
            raise ValueError(f"depth {d} outside 1..{NUM_DEPTHS}")
        return float(self.evaluate(q_index)[d - 1])


def fit_prior(calibration_stats: list) -> PriorModel:
    """Least-squares lines per depth from (q_index, fractions[4]) samples."""
    if len(calibration_stats) < 2:
        raise InsufficientData(
            f"need at least 2 calibration samples, got {len(calibration_stats)}"
        )
    qs = np.array([q for q, _ in calibration_stats], dtype=np.float64)
    if np.ptp(qs) == 0:
        raise DegenerateFit("all calibration samples share one q-index")
    fracs = np.array([list(f) for _, f in calibration_stats], dtype=np.float64)
    if fracs.shape[1] != NUM_DEPTHS:
        raise ValueError(f"expected {NUM_DEPTHS} fractions per sample")
    if fracs.min() < 0 or fracs.max() > 1:
        raise ValueError("area fractions must lie in [0, 1]")
    slopes = []
    intercepts = []
    for d in range(NUM_DEPTHS):
        slope, intercept = np.polyfit(qs, fracs[:, d], 1)
        slopes.append(float(slope))
        intercepts.append(float(intercept))
    return PriorModel(slopes=tuple(slopes), intercepts=tuple(intercepts))


def prior_split_prob(model: PriorModel, d: int, q_index: float) -> float:
    """Prior probability that a depth-d square block is 4-split."""
    if not 0 <= d < NUM_DEPTHS:
        raise ValueError(f"gated depth {d} outside 0..{NUM_DEPTHS - 1}")
    a = model.evaluate(q_index)
    if d == 0:
        p0 = 1.0 - a[0]
    else:
        p0 = (1.0 - a[d]) / (1.0 - a[d - 1])
    return _clamp(p0, model.eps, 1.0 - model.eps)


def save_prior(model: PriorModel, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "slope", "intercept"])
        for d in range(NUM_DEPTHS):
            writer.writerow([d + 1, repr(model.slopes[d]), repr(model.intercepts[d])])


def load_prior(path: str) -> PriorModel:
    slopes = [0.0] * NUM_DEPTHS
    intercepts = [0.0] * NUM_DEPTHS
    seen = set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = int(row["d"])
            if not 1 <= d <= NUM_DEPTHS:
                raise ValueError(f"prior file row with depth {d}")
            slopes[d - 1] = float(row["slope"])
            intercepts[d - 1] = float(row["intercept"])
            seen.add(d)
    if seen != set(range(1, NUM_DEPTHS + 1)):
        raise ValueError(f"prior file covers depths {sorted(seen)}, need 1..4")
    return PriorModel(slopes=tuple(slopes), intercepts=tuple(intercepts))


# ---------------------------------------------------------------------------
# Occurrence tables and the posterior
# ---------------------------------------------------------------------------


class CountTables:
    """Per-depth occurrence tables of (anchor, remote) split degrees.

    One pair of 5x5 tables per gated depth: one counting blocks whose search
    chose the 4-split, one counting blocks that stayed. Cells start at 1.0
    (Laplace smoothing) so likelihood ratios are defined from the first block
    and early posteriors equal the prior.
    """

    def __init__(self, init: float = 1.0):
        self.t_plus = np.full((NUM_DEPTHS, DEGREE_BINS, DEGREE_BINS), init)
        self.t_minus = np.full((NUM_DEPTHS, DEGREE_BINS, DEGREE_BINS), init)

    def copy(self) -> "CountTables":
        out = CountTables.__new__(CountTables)
        out.t_plus = self.t_plus.copy()
        out.t_minus = self.t_minus.copy()
        return out

    def rows(self):
        for d in range(NUM_DEPTHS):
            for i in range(DEGREE_BINS):
                for j in range(DEGREE_BINS):
                    yield d, i, j, self.t_plus[d, i, j], self.t_minus[d, i, j]


def likelihoods(tables: CountTables, d: int, d_fl: int, d_fr: int) -> tuple:
    """Cell frequencies under split and non-split outcomes."""
    l_plus = tables.t_plus[d, d_fl, d_fr] / tables.t_plus[d].sum()
    l_minus = tables.t_minus[d, d_fl, d_fr] / tables.t_minus[d].sum()
    return float(l_plus), float(l_minus)


def posterior(p0: float, l_plus: float, l_minus: float) -> float:
    """Split probability after conditioning on the observed degree pair."""
    num = l_plus * p0
    den = num + l_minus * (1.0 - p0)
    return num / den


def update_tables(
    tables: CountTables, d: int, d_fl: int, d_fr: int, was_split: bool, k: float
) -> CountTables:
    """Add weight k to the matching cell of the split or non-split table."""
    if was_split:
        tables.t_plus[d, d_fl, d_fr] += k
    else:
        tables.t_minus[d, d_fl, d_fr] += k
    return tables


def dump_tables(tables: CountTables, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "d_fl", "d_fr", "t_plus", "t_minus"])
        for d, i, j, tp, tm in tables.rows():
            writer.writerow([d, i, j, repr(float(tp)), repr(float(tm))])


# ---------------------------------------------------------------------------
# Gate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BayesParams:
    tau1: float
    tau2: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau1 < 1.0:
            raise ValueError(f"tau1={self.tau1} outside (0, 1)")
        if not 0.0 < self.tau2 < 1.0:
            raise ValueError(f"tau2={self.tau2} outside (0, 1)")


@dataclass(frozen=True)
class GateContext:
    """Evidence for one gated block."""

    d: int
    d_fl: int   # split degree in the latest preceding anchor frame
    d_fr: int   # split degree in the remote (reference-instance) frame
    q_index: int


@dataclass(frozen=True)
class GateDecision:
    terminate: bool
    k: float = 0.0  # update weight when a full search runs

    @property
    def full_search(self) -> bool:
        return not self.terminate


def gate_decision(p: float, params: BayesParams, x: float) -> GateDecision:
    """Terminate, search with weight 1, or search with weight 1/tau2.

    Boundary semantics: p == tau1 counts as eligible, x == tau2 counts as
    terminate.
    """
    if p <= params.tau1:
        if x >= params.tau2:
            return GateDecision(terminate=True)
        return GateDecision(terminate=False, k=1.0 / params.tau2)
    return GateDecision(terminate=False, k=1.0)


def block_posterior(
    model: PriorModel, tables: CountTables, ctx: GateContext,
    eps: float = EPSILON,
) -> float:
    """Posterior split probability, clamped into [eps, 1-eps] before gating."""
    p0 = prior_split_prob(model, ctx.d, ctx.q_index)
    l_plus, l_minus = likelihoods(tables, ctx.d, ctx.d_fl, ctx.d_fr)
    return _clamp(posterior(p0, l_plus, l_minus), eps, 1.0 - eps)


def keyed_uniform(seed: int, *key: int) -> float:
    """Deterministic uniform draw in [0, 1) from a (seed, key...) tuple.

    Counter-based so draws are independent of visit order; identical keys
    give identical values across processes and platforms.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack(f"<{len(key) + 1}q", seed, *key))
    return int.from_bytes(h.digest(), "little") / 2.0 ** 64
