"""Multi-rate orchestration: one full-search reference instance plus local
instances at higher quality levels that may prune their partition search.

Four gating strategies are wired into the search:

* full            -- every 4-split branch searched
* prune-all       -- skip the 4-split once a block's depth reaches its split
                     degree in the reference instance, on every frame
* prune-improved  -- same rule, but anchor frames are always fully searched
* bayes           -- posterior-thresholded termination on non-anchor frames,
                     with exception sampling and weighted table updates

"Special" frames are the periodic better-quality anchors (a stand-in for
intra/golden/altref frames): encoded at a reduced Q and, in the improved and
bayes modes, always fully searched.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import metrics
from .frame_io import FramePlane, SUPERBLOCK, pad_plane
from .inference import (
    BayesParams,
    CountTables,
    GateContext,
    PriorModel,
    block_posterior,
    fit_prior,
    gate_decision,
    keyed_uniform,
)
from .rdo_core import (
    AllowAll,
    BlockGeom,
    CostModelParams,
    EncodedFrame,
    QualityLevel,
    SplitGate,
    encode_frame,
    split_degree,
)


class MissingReference(ValueError):
    pass


class MissingPrior(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class InvalidQOrdering(ValueError):
    pass


class EncodeMode(Enum):
    FULL = "full"
    PRUNE_ALL = "prune-all"
    PRUNE_NON_SPECIAL = "prune-improved"
    BAYES = "bayes"


@dataclass(frozen=True)
class Schedule:
    """Periodic special-frame layout; frame 0 is always special."""

    special_period: int = 8
    special_q_offset: int = 8
    intra_only_specials: bool = False

    def __post_init__(self):
        if self.special_period < 1:
            raise ValueError("special_period must be >= 1")

    def is_special(self, frame_index: int) -> bool:
        return frame_index % self.special_period == 0

    def latest_special_before(self, frame_index: int) -> int:
        """Largest special index strictly before the frame; 0 for frame 0."""
        if frame_index <= 0:
            return 0
        return ((frame_index - 1) // self.special_period) * self.special_period

    def effective_q(self, q: int, frame_index: int) -> int:
        if self.is_special(frame_index):
            return max(0, q - self.special_q_offset)
        return q


def classify_frame(frame_index: int, schedule: Schedule) -> str:
    return "special" if schedule.is_special(frame_index) else "normal"


@dataclass(frozen=True)
class GateEvent:
    """One gate consultation in a bayes-mode encode."""

    frame_index: int
    x: int
    y: int
    w: int
    depth: int
    d_fl: int
    d_fr: int
    p: float
    terminated: bool
    k: float


@dataclass
class InstanceResult:
    """Everything produced by encoding one instance of the ladder."""

    Q: int
    mode: EncodeMode
    frames: list
    special_flags: list
    leaf_evaluations_total: int
    rate_proxy_total: float
    distortion_total: float
    psnr_per_frame: list
    wall_seconds: float = 0.0
    gate_events: Optional[list] = None
    count_tables: Optional[CountTables] = None
    split_records: Optional[list] = None

    @property
    def posterior_samples(self) -> list:
        if self.gate_events is None:
            return []
        return [e.p for e in self.gate_events]

    def mean_psnr(self) -> float:
        return sum(self.psnr_per_frame) / len(self.psnr_per_frame)


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------


class ReferencePruneGate(SplitGate):
    """Allow a 4-split only while the block is shallower than its split
    degree in the co-indexed reference frame."""

    def __init__(self, reference_frame: EncodedFrame):
        self.reference_frame = reference_frame

    def allow_split(self, geom: BlockGeom) -> bool:
        return geom.depth < split_degree(self.reference_frame, geom)


class RecordingGate(SplitGate):
    """Wrap a gate and keep (was_split, subtree_evals) per consulted block."""

    def __init__(self, inner: SplitGate):
        self.inner = inner
        self.records: dict = {}

    def allow_split(self, geom: BlockGeom) -> bool:
        return self.inner.allow_split(geom)

    def record(self, geom: BlockGeom, was_split: bool, subtree_evals: int) -> None:
        self.records[(geom.x, geom.y, geom.w)] = (was_split, subtree_evals)
        self.inner.record(geom, was_split, subtree_evals)


class BayesGate(SplitGate):
    """Posterior-thresholded gate for one non-special frame.

    Likelihood reads use the table state from the frame start; updates land
    in the live tables immediately (addition commutes, so within-frame order
    is immaterial). The uniform draw is keyed, not streamed, so decisions do
    not depend on superblock visit order.
    """

    def __init__(
        self,
        prior: PriorModel,
        live_tables: CountTables,
        bayes: BayesParams,
        reference_frame: EncodedFrame,
        anchor_frame: EncodedFrame,
        q_index: int,
        instance_id: int,
        frame_index: int,
        frame_width: int,
        events: list,
    ):
        self.prior = prior
        self.live_tables = live_tables
        self.snapshot = live_tables.copy()
        self.bayes = bayes
        self.reference_frame = reference_frame
        self.anchor_frame = anchor_frame
        self.q_index = q_index
        self.instance_id = instance_id
        self.frame_index = frame_index
        self.sb_cols = frame_width // SUPERBLOCK
        self.events = events
        self.pending: dict = {}

    def allow_split(self, geom: BlockGeom) -> bool:
        d = geom.depth
        d_fl = split_degree(self.anchor_frame, geom)
        d_fr = split_degree(self.reference_frame, geom)
        ctx = GateContext(d=d, d_fl=d_fl, d_fr=d_fr, q_index=self.q_index)
        p = block_posterior(self.prior, self.snapshot, ctx)
        sb_index = (geom.y // SUPERBLOCK) * self.sb_cols + geom.x // SUPERBLOCK
        x = keyed_uniform(
            self.bayes.rng_seed,
            self.instance_id,
            self.frame_index,
            sb_index,
            geom.x,
            geom.y,
            d,
        )
        decision = gate_decision(p, self.bayes, x)
        self.events.append(
            GateEvent(
                frame_index=self.frame_index,
                x=geom.x,
                y=geom.y,
                w=geom.w,
                depth=d,
                d_fl=d_fl,
                d_fr=d_fr,
                p=p,
                terminated=decision.terminate,
                k=decision.k,
            )
        )
        if decision.terminate:
            return False
        self.pending[(geom.x, geom.y, geom.w)] = (d, d_fl, d_fr, decision.k)
        return True

    def record(self, geom: BlockGeom, was_split: bool, subtree_evals: int) -> None:
        d, d_fl, d_fr, k = self.pending.pop((geom.x, geom.y, geom.w))
        if was_split:
            self.live_tables.t_plus[d, d_fl, d_fr] += k
        else:
            self.live_tables.t_minus[d, d_fl, d_fr] += k


# ---------------------------------------------------------------------------
# Instance encoding
# ---------------------------------------------------------------------------


def encode_instance(
    sequence: list,
    Q: int,
    mode: EncodeMode,
    schedule: Schedule,
    params: CostModelParams,
    reference_frames: Optional[list] = None,
    prior: Optional[PriorModel] = None,
    bayes: Optional[BayesParams] = None,
    instance_id: Optional[int] = None,
    record_split_decisions: bool = False,
) -> InstanceResult:
    """Encode a sequence at one quality level under the requested gating.

    Pruning modes need the reference instance's encoded frames, aligned by
    index; bayes mode additionally needs a prior and its parameters.
    """
    if not sequence:
        raise LengthMismatch("empty sequence")
    if mode != EncodeMode.FULL:
        if reference_frames is None:
            raise MissingReference(f"{mode.value} mode requires reference frames")
        if len(reference_frames) != len(sequence):
            raise LengthMismatch(
                f"{len(reference_frames)} reference frames for "
                f"{len(sequence)} input frames"
            )
    if mode == EncodeMode.BAYES:
        if prior is None:
            raise MissingPrior("bayes mode requires a fitted prior")
        if bayes is None:
            raise MissingPrior("bayes mode requires BayesParams")
    if instance_id is None:
        instance_id = Q

    sequence = [pad_plane(p) for p in sequence]
    tables = CountTables() if mode == EncodeMode.BAYES else None
    events: Optional[list] = [] if mode == EncodeMode.BAYES else None
    split_records: Optional[list] = [] if record_split_decisions else None
    frames: list = []
    special_flags: list = []
    psnrs: list = []
    evals_total = 0
    rate_total = 0.0
    dist_total = 0.0
    prev_recon: Optional[FramePlane] = None
    started = time.perf_counter()

    for i, plane in enumerate(sequence):
        special = schedule.is_special(i)
        quality = QualityLevel(schedule.effective_q(Q, i))
        prev = prev_recon
        if i == 0 or (special and schedule.intra_only_specials):
            prev = None

        gate: SplitGate = AllowAll()
        if mode == EncodeMode.PRUNE_ALL:
            gate = ReferencePruneGate(reference_frames[i])
        elif mode == EncodeMode.PRUNE_NON_SPECIAL:
            if not special:
                gate = ReferencePruneGate(reference_frames[i])
        elif mode == EncodeMode.BAYES:
            if not special:
                anchor_index = schedule.latest_special_before(i)
                gate = BayesGate(
                    prior=prior,
                    live_tables=tables,
                    bayes=bayes,
                    reference_frame=reference_frames[i],
                    anchor_frame=frames[anchor_index],
                    q_index=quality.q_index,
                    instance_id=instance_id,
                    frame_index=i,
                    frame_width=plane.width,
                    events=events,
                )
        if record_split_decisions:
            gate = RecordingGate(gate)

        encoded = encode_frame(plane, prev, quality, params, gate)
        frames.append(encoded)
        special_flags.append(special)
        prev_recon = encoded.reconstruction
        evals_total += encoded.leaf_evaluations
        rate_total += encoded.rate_proxy
        dist_total += encoded.distortion
        psnrs.append(metrics.frame_psnr(plane, encoded.reconstruction))
        if record_split_decisions:
            split_records.append(gate.records)

    return InstanceResult(
        Q=Q,
        mode=mode,
        frames=frames,
        special_flags=special_flags,
        leaf_evaluations_total=evals_total,
        rate_proxy_total=rate_total,
        distortion_total=dist_total,
        psnr_per_frame=psnrs,
        wall_seconds=time.perf_counter() - started,
        gate_events=events,
        count_tables=tables,
        split_records=split_records,
    )


# ---------------------------------------------------------------------------
# Prior calibration
# ---------------------------------------------------------------------------

CALIBRATION_BRACKET = 5


def calibration_grid(local_qs: list, bracket: int = CALIBRATION_BRACKET) -> list:
    grid = set()
    for q in local_qs:
        for delta in (-bracket, 0, bracket):
            grid.add(min(63, max(0, q + delta)))
    return sorted(grid)


def calibrate_prior(
    sequence: list,
    local_qs: list,
    schedule: Schedule,
    params: CostModelParams,
    bracket: int = CALIBRATION_BRACKET,
    calib_frames: Optional[int] = None,
) -> PriorModel:
    """Fit the prior from full encodes of a short prefix at a Q grid.

    The prefix defaults to one special-frame period so the samples come from
    non-special frames of a realistic group.
    """
    n = calib_frames if calib_frames is not None else schedule.special_period
    n = max(2, min(n, len(sequence)))
    if len(sequence) < 2:
        raise MissingPrior("sequence too short to calibrate a prior")
    prefix = sequence[:n]
    samples = []
    for q in calibration_grid(local_qs, bracket):
        result = encode_instance(prefix, q, EncodeMode.FULL, schedule, params)
        stats = metrics.depth_area_stats(result)
        samples.append((4 * q, stats.cumulative))
    return fit_prior(samples)


# ---------------------------------------------------------------------------
# Ladder runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalMetrics:
    """Derived speed/quality deltas of one local instance vs its full twin."""

    Q: int
    time_saving: float
    wall_time_saving: Optional[float]
    rate_delta: float
    mean_psnr: float
    baseline_mean_psnr: float


@dataclass
class MultiRateReport:
    reference: InstanceResult
    locals: list
    baselines: dict
    local_metrics: list
    anchor_points: list
    test_points: list
    bd_rate_vs_full: Optional[float]
    prior: Optional[PriorModel] = None


def run_multirate(
    sequence: list,
    reference_q: int,
    local_qs: list,
    mode: EncodeMode,
    schedule: Schedule,
    params: CostModelParams,
    bayes: Optional[BayesParams] = None,
    prior: Optional[PriorModel] = None,
    jobs: int = 1,
    record_split_decisions: bool = False,
) -> MultiRateReport:
    """Encode the reference plus all local instances and derive the report.

    The reference (best quality, lowest Q) is always a full search and always
    completes first. For non-full modes each local Q also gets a full-search
    shadow encode: the honest baseline for time saving, the anchor for the
    rate-distortion comparison, and (in bayes mode) the oracle for the bound
    report. Time-saving figures never include the reference instance's cost.
    """
    if not sequence:
        raise LengthMismatch("empty sequence")
    if not local_qs:
        raise InvalidQOrdering("need at least one local quality level")
    if reference_q >= min(local_qs):
        raise InvalidQOrdering(
            f"reference Q={reference_q} must be strictly below all local Qs "
            f"{sorted(local_qs)}"
        )
    sequence = [pad_plane(p) for p in sequence]
    reference = encode_instance(
        sequence, reference_q, EncodeMode.FULL, schedule, params
    )
    if mode == EncodeMode.BAYES and prior is None:
        prior = calibrate_prior(sequence, local_qs, schedule, params)

    record_shadows = record_split_decisions or mode == EncodeMode.BAYES

    def encode_local(q: int) -> InstanceResult:
        return encode_instance(
            sequence, q, mode, schedule, params,
            reference_frames=reference.frames, prior=prior, bayes=bayes,
        )

    def encode_baseline(q: int) -> InstanceResult:
        return encode_instance(
            sequence, q, EncodeMode.FULL, schedule, params,
            record_split_decisions=record_shadows,
        )

    unique_qs = sorted(set(local_qs))
    if mode == EncodeMode.FULL:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                locals_ = list(pool.map(encode_local, local_qs))
        else:
            locals_ = [encode_local(q) for q in local_qs]
        baselines = {q: next(r for r in locals_ if r.Q == q) for q in unique_qs}
    else:
        tasks = [("local", q) for q in local_qs] + [("base", q) for q in unique_qs]

        def run_task(task):
            kind, q = task
            return encode_local(q) if kind == "local" else encode_baseline(q)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run_task, tasks))
        else:
            results = [run_task(t) for t in tasks]
        locals_ = results[: len(local_qs)]
        baselines = {q: r for (_, q), r in zip(tasks[len(local_qs):],
                                               results[len(local_qs):])}

    local_metrics = []
    for inst in locals_:
        base = baselines[inst.Q]
        local_metrics.append(
            LocalMetrics(
                Q=inst.Q,
                time_saving=metrics.time_saving(inst, base),
                wall_time_saving=metrics.wall_time_saving(inst, base),
                rate_delta=(
                    (inst.rate_proxy_total - base.rate_proxy_total)
                    / base.rate_proxy_total
                ),
                mean_psnr=inst.mean_psnr(),
                baseline_mean_psnr=base.mean_psnr(),
            )
        )

    def rd_point(inst: InstanceResult) -> metrics.RdPoint:
        return metrics.RdPoint(rate=inst.rate_proxy_total, quality=inst.mean_psnr())

    anchor_points = [rd_point(reference)] + [
        rd_point(baselines[q]) for q in unique_qs
    ]
    test_insts = {inst.Q: inst for inst in locals_}
    test_points = [rd_point(reference)] + [rd_point(test_insts[q]) for q in unique_qs]
    anchor_points.sort(key=lambda p: p.quality)
    test_points.sort(key=lambda p: p.quality)
    try:
        bd = metrics.bd_rate(anchor_points, test_points)
    except (metrics.InsufficientPoints, metrics.NoOverlap):
        bd = None
    return MultiRateReport(
        reference=reference,
        locals=locals_,
        baselines=baselines,
        local_metrics=local_metrics,
        anchor_points=anchor_points,
        test_points=test_points,
        bd_rate_vs_full=bd,
        prior=prior,
    )
