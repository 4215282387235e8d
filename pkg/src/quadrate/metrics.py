"""Quality, rate and speed metrics over completed encoder instances.

Time is measured in leaf-cost evaluations, never wall clock, wherever a
number feeds an assertion; wall clock is reported alongside for colour.
Rates are in the cost model's proxy units throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .frame_io import FramePlane
from .rdo_core import BlockGeom, EncodedFrame, PartitionChoice, split_degree

PSNR_CAP_DB = 100.0

# leaf evaluations a gated square block consumes when the 4-split branch is
# skipped: one no-partition probe plus two halves each way
TERMINATED_NODE_EVALS = 5


class DimMismatch(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class NoOverlap(ValueError):
    pass


class Mismatch(ValueError):
    pass


class SeedMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


@dataclass(frozen=True)
class RdPoint:
    rate: float     # total rate proxy
    quality: float  # PSNR dB

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")


def frame_psnr(original: FramePlane, reconstruction: FramePlane) -> float:
    """PSNR over the pre-padding window; identical planes cap at 100 dB."""
    if (
        original.crop_width != reconstruction.crop_width
        or original.crop_height != reconstruction.crop_height
    ):
        raise DimMismatch(
            f"windows differ: {original.crop_width}x{original.crop_height} vs "
            f"{reconstruction.crop_width}x{reconstruction.crop_height}"
        )
    a = original.samples[: original.crop_height, : original.crop_width]
    b = reconstruction.samples[: original.crop_height, : original.crop_width]
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(255.0 ** 2 / mse), PSNR_CAP_DB)


def bd_rate(anchor: list, test: list) -> float:
    """Average rate difference at equal quality, in percent.

    Cubic fit of log(rate) against quality per curve, integrated exactly
    over the overlapping quality interval. Positive means the test curve
    spends more rate than the anchor at the same quality.
    """
    if len(anchor) < 4 or len(test) < 4:
        raise InsufficientPoints(
            f"need at least 4 points per curve, got {len(anchor)}/{len(test)}"
        )
    for pts in (anchor, test):
        qs = [p.quality for p in pts]
        if any(q2 <= q1 for q1, q2 in zip(qs, qs[1:])):
            raise InsufficientPoints("points must have strictly increasing quality")
    aq = np.array([p.quality for p in anchor])
    ar = np.log(np.array([p.rate for p in anchor]))
    tq = np.array([p.quality for p in test])
    tr = np.log(np.array([p.rate for p in test]))
    lo = max(aq.min(), tq.min())
    hi = min(aq.max(), tq.max())
    if hi <= lo:
        raise NoOverlap(f"quality ranges [{aq.min()},{aq.max()}] and "
                        f"[{tq.min()},{tq.max()}] do not overlap")
    pa = np.polyfit(aq, ar, 3)
    pt = np.polyfit(tq, tr, 3)
    ia = np.polyint(pa)
    it = np.polyint(pt)
    int_anchor = np.polyval(ia, hi) - np.polyval(ia, lo)
    int_test = np.polyval(it, hi) - np.polyval(it, lo)
    avg_diff = (int_test - int_anchor) / (hi - lo)
    return float(100.0 * (math.exp(avg_diff) - 1.0))


def time_saving(local, baseline_full) -> float:
    """Fractional leaf-evaluation saving of an instance against its full-search
    twin; negative means faster."""
    if local.Q != baseline_full.Q or len(local.frames) != len(baseline_full.frames):
        raise Mismatch(
            f"instances differ: Q {local.Q}/{baseline_full.Q}, "
            f"{len(local.frames)}/{len(baseline_full.frames)} frames"
        )
    base = baseline_full.leaf_evaluations_total
    return (local.leaf_evaluations_total - base) / base


def wall_time_saving(local, baseline_full) -> Optional[float]:
    """Wall-clock counterpart of time_saving; informational only."""
    if not baseline_full.wall_seconds:
        return None
    return (local.wall_seconds - baseline_full.wall_seconds) / baseline_full.wall_seconds


# ---------------------------------------------------------------------------
# Partition-structure statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepthAreaStats:
    """Area shares by prime-block depth plus cumulative shallow-area samples."""

    fractions: tuple    # share of padded area at depth 0..4
    cumulative: tuple   # share at depth < d, for d = 1..4


def depth_area_stats(instance) -> DepthAreaStats:
    """Prime-block area shares, averaged over non-special frames.

    Falls back to all frames when the instance has no non-special frame
    (single-frame or period-1 runs).
    """
    areas = np.zeros(5, dtype=np.float64)
    frames = [
        ef for ef, special in zip(instance.frames, instance.special_flags)
        if not special
    ]
    if not frames:
        frames = list(instance.frames)
    for ef in frames:
        for tree in ef.trees:
            for leaf in tree.leaves():
                g = leaf.geom
                areas[g.depth] += g.w * g.h
    total = areas.sum()
    fractions = areas / total
    cumulative = np.cumsum(fractions)[:4]
    return DepthAreaStats(
        fractions=tuple(float(f) for f in fractions),
        cumulative=tuple(float(c) for c in cumulative),
    )


@dataclass(frozen=True)
class CompareStats:
    """Area shares of local prime blocks by remote-vs-local depth order."""

    remote_shallower: float  # d_R < d_L
    equal: float             # d_R = d_L
    remote_deeper: float     # d_R > d_L


def depth_compare_stats(local, reference) -> CompareStats:
    if len(local.frames) != len(reference.frames):
        raise Mismatch(
            f"{len(local.frames)} local frames vs {len(reference.frames)} reference"
        )
    lt = eq = gt = 0.0
    for local_frame, ref_frame in zip(local.frames, reference.frames):
        for tree in local_frame.trees:
            for leaf in tree.leaves():
                g = leaf.geom
                d_l = g.depth
                d_r = split_degree(ref_frame, g)
                area = g.w * g.h
                if d_r < d_l:
                    lt += area
                elif d_r == d_l:
                    eq += area
                else:
                    gt += area
    total = lt + eq + gt
    return CompareStats(lt / total, eq / total, gt / total)


@dataclass(frozen=True)
class PosteriorHistogram:
    """Binned density estimate of observed gate posteriors over [0, 1]."""

    edges: tuple
    counts: tuple
    density: tuple

    def integral(self) -> float:
        widths = np.diff(np.array(self.edges))
        return float((np.array(self.density) * widths).sum())


def posterior_histogram(samples, bins: int = 50) -> PosteriorHistogram:
    if len(samples) == 0:
        raise Empty("no posterior samples")
    counts, edges = np.histogram(np.array(samples, dtype=np.float64),
                                 bins=bins, range=(0.0, 1.0))
    width = 1.0 / bins
    density = counts / (counts.sum() * width)
    return PosteriorHistogram(
        edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        density=tuple(float(d) for d in density),
    )


# ---------------------------------------------------------------------------
# Early-termination bound report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruningBoundReport:
    """Empirical counterparts of the termination cost/penalty accounting.

    n: gated blocks; n_t: early-terminated; n_b: terminated blocks whose
    full-search twin chose the 4-split. dt_total/db_total are instance-level
    evaluation-saving and rate-penalty fractions; dt_block/db_block are the
    per-block averages among affected blocks. The headline inequality is
    bound_lhs <= bound_rhs with bound_lhs = db_total/db_block and
    bound_rhs = tau1 * dt_total/dt_block. Rates are proxy units.
    """

    n: int
    n_t: int
    n_b: int
    dt_total: float
    db_total: float
    dt_block: float
    db_block: float
    bound_lhs: float
    bound_rhs: float
    tau1: float
    nb_over_nt: float
    max_terminated_p: float


def _find_node(encoded: EncodedFrame, x: int, y: int, w: int):
    for tree in encoded.trees:
        g = tree.geom
        if not (g.x <= x < g.x + g.w and g.y <= y < g.y + g.h):
            continue
        stack = [tree]
        while stack:
            node = stack.pop()
            ng = node.geom
            if ng.x == x and ng.y == y and ng.w == w and ng.h == w:
                return node
            if not (ng.x <= x < ng.x + ng.w and ng.y <= y < ng.y + ng.h):
                continue
            stack.extend(node.children)
    return None


def _subtree_rate(node) -> float:
    return sum(leaf.leaf.rate_proxy for leaf in node.leaves())


def region_rate(encoded: EncodedFrame, region: BlockGeom) -> float:
    """Leaf rate attributed to a region, prorated by pixel overlap.

    Partition signalling is excluded; this is the per-block penalty proxy.
    """
    total = 0.0
    for tree in encoded.trees:
        if not tree.geom.intersects(region):
            continue
        for leaf in tree.leaves():
            g = leaf.geom
            if not g.intersects(region):
                continue
            ox = min(g.x + g.w, region.x + region.w) - max(g.x, region.x)
            oy = min(g.y + g.h, region.y + region.h) - max(g.y, region.y)
            total += leaf.leaf.rate_proxy * (ox * oy) / (g.w * g.h)
    return total


def pruning_bound_report(local, shadow_full, tau1: float) -> PruningBoundReport:
    """Measure both sides of the termination bound from a gated run and its
    full-search shadow (same sequence, Q, schedule and seeds).

    The shadow must have been encoded with split-decision recording; it is an
    independent re-encode, not a reuse of the gated run's pruned trees.
    """
    if local.gate_events is None:
        raise SeedMismatch("local instance has no gate events (not a gated run)")
    if shadow_full.split_records is None:
        raise SeedMismatch("shadow instance lacks split-decision records")
    if local.Q != shadow_full.Q or len(local.frames) != len(shadow_full.frames):
        raise SeedMismatch(
            f"instances differ: Q {local.Q}/{shadow_full.Q}, "
            f"{len(local.frames)}/{len(shadow_full.frames)} frames"
        )
    events = local.gate_events
    n = len(events)
    terminated = [e for e in events if e.terminated]
    n_t = len(terminated)
    n_b = 0
    dt_fracs = []
    db_fracs = []
    max_p = 0.0
    for ev in terminated:
        max_p = max(max_p, ev.p)
        rec = shadow_full.split_records[ev.frame_index].get((ev.x, ev.y, ev.w))
        if rec is None:
            raise SeedMismatch(
                f"shadow has no record for block ({ev.x},{ev.y},{ev.w}) "
                f"in frame {ev.frame_index}"
            )
        was_split, subtree_evals = rec
        dt_fracs.append((TERMINATED_NODE_EVALS - subtree_evals) / subtree_evals)
        if was_split:
            n_b += 1
            geom = BlockGeom(ev.x, ev.y, ev.w, ev.w)
            node = _find_node(local.frames[ev.frame_index], ev.x, ev.y, ev.w)
            if node is None:
                continue  # termination never materialized in the chosen tree
            b = _subtree_rate(node)
            b0 = region_rate(shadow_full.frames[ev.frame_index], geom)
            if b0 > 0:
                db_fracs.append((b - b0) / b0)
    base_evals = shadow_full.leaf_evaluations_total
    dt_total = (local.leaf_evaluations_total - base_evals) / base_evals
    db_total = (
        (local.rate_proxy_total - shadow_full.rate_proxy_total)
        / shadow_full.rate_proxy_total
    )
    dt_block = float(np.mean(dt_fracs)) if dt_fracs else 0.0
    db_block = float(np.mean(db_fracs)) if db_fracs else 0.0
    bound_lhs = db_total / db_block if db_block != 0.0 else 0.0
    bound_rhs = tau1 * dt_total / dt_block if dt_block != 0.0 else 0.0
    return PruningBoundReport(
        n=n,
        n_t=n_t,
        n_b=n_b,
        dt_total=dt_total,
        db_total=db_total,
        dt_block=dt_block,
        db_block=db_block,
        bound_lhs=bound_lhs,
        bound_rhs=bound_rhs,
        tau1=tau1,
        nb_over_nt=(n_b / n_t) if n_t else 0.0,
        max_terminated_p=max_p,
    )
