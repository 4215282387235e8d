"""Quadtree partition search with a pluggable rate-distortion cost model.

Blocks are squares or halves of squares from 64x64 down to 4x4. The search
space per square block is {no partition, horizontal halves, vertical halves,
4-way split}; halves never split further. The 4-way branch is guarded by a
caller-supplied gate so pruning strategies can be plugged in without touching
the search itself.

The cost model is an explicit surrogate for a real codec: residuals are
quantized in the spatial domain and the rate proxy is sum(log2(1+|level|)).
All bitrate-denominated outputs of the package are in these proxy units.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterator, Optional, Union

import numpy as np

from .frame_io import FramePlane, SUPERBLOCK

MIN_BLOCK = 4
MAX_DEPTH = 4


class InvalidDims(ValueError):
    """Block dimensions outside {4, 8, 16, 32, 64}."""


class OutOfBounds(ValueError):
    """Block geometry not contained in the frame."""


class TooLarge(ValueError):
    """Brute-force enumeration requested for a block above 16x16."""


_LEGAL_DIMS = (4, 8, 16, 32, 64)


def depth_of(w: int, h: int) -> int:
    """Depth of a w x h block: log2(64 / longer edge), 0..4."""
    if w not in _LEGAL_DIMS or h not in _LEGAL_DIMS:
        raise InvalidDims(f"illegal block dims {w}x{h}")
    longer = max(w, h)
    return (SUPERBLOCK // longer).bit_length() - 1


@dataclass(frozen=True)
class BlockGeom:
    """Pixel-offset rectangle of a block within the (padded) frame."""

    x: int
    y: int
    w: int
    h: int

    @property
    def depth(self) -> int:
        return depth_of(self.w, self.h)

    @property
    def is_square(self) -> bool:
        return self.w == self.h

    def can_partition(self) -> bool:
        # halves and 4x4 blocks admit no partition
        return self.is_square and self.w >= 2 * MIN_BLOCK

    def intersects(self, other: "BlockGeom") -> bool:
        return (
            self.x < other.x + other.w
            and other.x < self.x + self.w
            and self.y < other.y + other.h
            and other.y < self.y + self.h
        )


class PartitionChoice(IntEnum):
    # declaration order is the deterministic tie-break order
    NONE = 0
    HORZ = 1
    VERT = 2
    SPLIT4 = 3


class LeafMode(IntEnum):
    DC_INTRA = 0
    ZERO_MV_INTER = 1


@dataclass(frozen=True)
class LeafResult:
    mode: LeafMode
    distortion: float
    rate_proxy: float
    cost: float


@dataclass(frozen=True)
class CostModelParams:
    """Free parameters of the surrogate cost model.

    quant step Delta(Q) = quant_base ** ((Q - quant_offset) / quant_scale),
    lambda(Q) = lambda_scale * Delta(Q)^2. Signalling charges are flat bit
    counts per internal tree node / per leaf.
    """

    quant_base: float = 2.0
    quant_offset: float = 12.0
    quant_scale: float = 6.0
    lambda_scale: float = 0.85
    partition_signal_bits: float = 4.0
    mode_signal_bits: float = 2.0

    def quant_step(self, q_level: int) -> float:
        return self.quant_base ** ((q_level - self.quant_offset) / self.quant_scale)

    def rd_lambda(self, q_level: int) -> float:
        step = self.quant_step(q_level)
        return self.lambda_scale * step * step


@dataclass(frozen=True)
class QualityLevel:
    """Quality level Q in [0, 63]; q_index is its lookup-table position."""

    Q: int

    def __post_init__(self):
        if not 0 <= self.Q <= 63:
            raise ValueError(f"Q={self.Q} outside [0, 63]")

    @property
    def q_index(self) -> int:
        return 4 * self.Q


@dataclass
class PartitionTree:
    """One node of the partition record for a superblock.

    ``cost`` is the total cost of the subtree including partition signalling
    for internal nodes; leaves carry their LeafResult.
    """

    geom: BlockGeom
    choice: PartitionChoice
    children: tuple = ()
    leaf: Optional[LeafResult] = None
    cost: float = 0.0

    def leaves(self) -> Iterator["PartitionTree"]:
        if self.choice == PartitionChoice.NONE:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()

    def nodes(self) -> Iterator["PartitionTree"]:
        yield self
        for child in self.children:
            yield from child.nodes()

    def rate_proxy(self, params: CostModelParams) -> float:
        """Leaf rates plus partition signalling per internal node."""
        total = 0.0
        for node in self.nodes():
            if node.choice == PartitionChoice.NONE:
                total += node.leaf.rate_proxy
            else:
                total += params.partition_signal_bits
        return total

    def distortion(self) -> float:
        return sum(leaf.leaf.distortion for leaf in self.leaves())

    def structure(self):
        """Nested choice tuple, convenient for exact tree comparisons."""
        if self.choice == PartitionChoice.NONE:
            return (int(self.choice), self.leaf.mode.value)
        return (int(self.choice),) + tuple(c.structure() for c in self.children)


def _leaf_node(geom: BlockGeom, leaf: LeafResult) -> PartitionTree:
    return PartitionTree(geom=geom, choice=PartitionChoice.NONE, leaf=leaf,
                         cost=leaf.cost)


def _internal_node(
    geom: BlockGeom, choice: PartitionChoice, children: tuple, lam: float,
    params: CostModelParams,
) -> PartitionTree:
    # sequential sum so search and oracle accumulate identically
    total = 0.0
    for child in children:
        total += child.cost
    total += params.partition_signal_bits * lam
    return PartitionTree(geom=geom, choice=choice, children=children, cost=total)


def horz_halves(geom: BlockGeom) -> tuple:
    hh = geom.h // 2
    return (BlockGeom(geom.x, geom.y, geom.w, hh),
            BlockGeom(geom.x, geom.y + hh, geom.w, hh))


def vert_halves(geom: BlockGeom) -> tuple:
    hw = geom.w // 2
    return (BlockGeom(geom.x, geom.y, hw, geom.h),
            BlockGeom(geom.x + hw, geom.y, hw, geom.h))


def quadrants(geom: BlockGeom) -> tuple:
    hw, hh = geom.w // 2, geom.h // 2
    return (
        BlockGeom(geom.x, geom.y, hw, hh),
        BlockGeom(geom.x + hw, geom.y, hw, hh),
        BlockGeom(geom.x, geom.y + hh, hw, hh),
        BlockGeom(geom.x + hw, geom.y + hh, hw, hh),
    )


@dataclass
class EvalCounter:
    """Leaf-evaluation tally owned by one search invocation."""

    leaf_evaluations: int = 0


def leaf_cost(
    geom: BlockGeom,
    frame: FramePlane,
    prev_reconstruction: Optional[FramePlane],
    quality: QualityLevel,
    params: CostModelParams,
    counter: Optional[EvalCounter] = None,
) -> LeafResult:
    """Best of DC-intra and zero-motion inter for one block.

    DC-intra predicts with the rounded source mean; inter predicts with the
    co-located block of the previous reconstruction when one is supplied.
    Ties go to DC-intra.
    """
    x, y, w, h = geom.x, geom.y, geom.w, geom.h
    if x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
        raise OutOfBounds(f"block {geom} outside {frame.width}x{frame.height}")
    src = frame.samples[y:y + h, x:x + w].astype(np.float64)
    step = params.quant_step(quality.Q)
    lam = params.rd_lambda(quality.Q)
    best = None
    dc = float(np.rint(src.mean()))
    modes = [(LeafMode.DC_INTRA, dc)]
    if prev_reconstruction is not None:
        pred = prev_reconstruction.samples[y:y + h, x:x + w].astype(np.float64)
        modes.append((LeafMode.ZERO_MV_INTER, pred))
    for mode, pred in modes:
        res = src - pred
        level = np.rint(res / step)
        err = res - level * step
        dist = float((err * err).sum())
        rate = params.mode_signal_bits + float(np.log2(1.0 + np.abs(level)).sum())
        cost = dist + lam * rate
        if best is None or cost < best.cost:
            best = LeafResult(mode=mode, distortion=dist, rate_proxy=rate, cost=cost)
    if counter is not None:
        counter.leaf_evaluations += 1
    return best


def reconstruct_leaf(
    node: PartitionTree,
    frame: FramePlane,
    prev_reconstruction: Optional[FramePlane],
    quality: QualityLevel,
    params: CostModelParams,
    out: np.ndarray,
) -> None:
    """Write the decoded samples of one leaf into ``out`` (uint8 frame array)."""
    g = node.geom
    src = frame.samples[g.y:g.y + g.h, g.x:g.x + g.w].astype(np.float64)
    if node.leaf.mode == LeafMode.DC_INTRA:
        pred = float(np.rint(src.mean()))
    else:
        pred = prev_reconstruction.samples[
            g.y:g.y + g.h, g.x:g.x + g.w
        ].astype(np.float64)
    step = params.quant_step(quality.Q)
    level = np.rint((src - pred) / step)
    recon = np.clip(np.rint(pred + level * step), 0, 255).astype(np.uint8)
    out[g.y:g.y + g.h, g.x:g.x + g.w] = recon


# ---------------------------------------------------------------------------
# Split gates
# ---------------------------------------------------------------------------


class SplitGate:
    """Guard for the 4-way split branch.

    ``allow_split`` is consulted once per square block where a 4-split is
    legal. When it allowed the branch, ``record`` is called after the block's
    best choice is known, with the number of leaf evaluations the block's
    whole search consumed.
    """

    def allow_split(self, geom: BlockGeom) -> bool:
        raise NotImplementedError

    def record(self, geom: BlockGeom, was_split: bool, subtree_evals: int) -> None:
        pass


class AllowAll(SplitGate):
    def allow_split(self, geom: BlockGeom) -> bool:
        return True


class DenyAll(SplitGate):
    def allow_split(self, geom: BlockGeom) -> bool:
        return False


class FnGate(SplitGate):
    def __init__(self, fn: Callable[[BlockGeom], bool]):
        self.fn = fn

    def allow_split(self, geom: BlockGeom) -> bool:
        return bool(self.fn(geom))


GateLike = Union[SplitGate, Callable[[BlockGeom], bool]]


def _as_gate(gate: GateLike) -> SplitGate:
    if isinstance(gate, SplitGate):
        return gate
    return FnGate(gate)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def rdo_search(
    geom: BlockGeom,
    frame: FramePlane,
    prev_reconstruction: Optional[FramePlane],
    quality: QualityLevel,
    params: CostModelParams,
    split_gate: GateLike = AllowAll(),
    counter: Optional[EvalCounter] = None,
) -> PartitionTree:
    """Min-cost partition tree over the gated search space.

    No-partition, horizontal and vertical halves are always evaluated when
    legal; the 4-way branch only when the gate allows it. With an allow-all
    gate the result is globally optimal over the partition grammar. Exact
    cost ties resolve in the order none < horz < vert < split.
    """
    gate = _as_gate(split_gate)
    if counter is None:
        counter = EvalCounter()
    return _search(geom, frame, prev_reconstruction, quality, params, gate, counter)


def _search(geom, frame, prev, quality, params, gate, counter) -> PartitionTree:
    lam = params.rd_lambda(quality.Q)
    start_evals = counter.leaf_evaluations
    best = _leaf_node(geom, leaf_cost(geom, frame, prev, quality, params, counter))
    if not geom.can_partition():
        return best
    for choice, halves in (
        (PartitionChoice.HORZ, horz_halves(geom)),
        (PartitionChoice.VERT, vert_halves(geom)),
    ):
        children = tuple(
            _leaf_node(g, leaf_cost(g, frame, prev, quality, params, counter))
            for g in halves
        )
        cand = _internal_node(geom, choice, children, lam, params)
        if cand.cost < best.cost:
            best = cand
    if gate.allow_split(geom):
        children = tuple(
            _search(g, frame, prev, quality, params, gate, counter)
            for g in quadrants(geom)
        )
        cand = _internal_node(geom, PartitionChoice.SPLIT4, children, lam, params)
        was_split = cand.cost < best.cost
        if was_split:
            best = cand
        gate.record(geom, was_split, counter.leaf_evaluations - start_evals)
    return best


def brute_force_rdo(
    geom: BlockGeom,
    frame: FramePlane,
    prev_reconstruction: Optional[FramePlane],
    quality: QualityLevel,
    params: CostModelParams,
) -> PartitionTree:
    """Exhaustive oracle: enumerate every legal tree, same costs, same ties.

    Tractable for blocks up to 16x16 (259 trees with the 4x4 minimum).
    """
    if geom.w > 16 or geom.h > 16:
        raise TooLarge(f"brute force limited to 16x16, got {geom.w}x{geom.h}")
    lam = params.rd_lambda(quality.Q)
    memo: dict = {}

    def cached_leaf(g: BlockGeom) -> LeafResult:
        if g not in memo:
            memo[g] = leaf_cost(g, frame, prev_reconstruction, quality, params)
        return memo[g]

    best = None
    for tree in enumerate_trees(geom, cached_leaf, lam, params):
        if best is None or tree.cost < best.cost:
            best = tree
    return best


def enumerate_trees(
    geom: BlockGeom, leaf_fn: Callable[[BlockGeom], LeafResult], lam: float,
    params: CostModelParams,
) -> Iterator[PartitionTree]:
    """Yield every legal tree rooted at geom, in tie-break order.

    Root choices come in the order none, horz, vert, split; split children
    iterate with the last quadrant varying fastest, which makes the first
    minimal tree in stream order the per-node tie-break winner.
    """
    yield _leaf_node(geom, leaf_fn(geom))
    if not geom.can_partition():
        return
    for choice, halves in (
        (PartitionChoice.HORZ, horz_halves(geom)),
        (PartitionChoice.VERT, vert_halves(geom)),
    ):
        children = tuple(_leaf_node(g, leaf_fn(g)) for g in halves)
        yield _internal_node(geom, choice, children, lam, params)
    child_variants = [
        list(enumerate_trees(g, leaf_fn, lam, params)) for g in quadrants(geom)
    ]
    for combo in itertools.product(*child_variants):
        yield _internal_node(geom, PartitionChoice.SPLIT4, tuple(combo), lam, params)


# ---------------------------------------------------------------------------
# Whole-frame encode and split-degree queries
# ---------------------------------------------------------------------------


@dataclass
class EncodedFrame:
    """Partition trees (raster superblock order) and reconstruction of a frame."""

    frame_index: int
    quality: QualityLevel
    trees: list
    reconstruction: FramePlane
    distortion: float
    rate_proxy: float
    leaf_evaluations: int


def superblock_geoms(width: int, height: int) -> list[BlockGeom]:
    if width % SUPERBLOCK or height % SUPERBLOCK:
        raise OutOfBounds(f"frame {width}x{height} not padded to 64-multiples")
    return [
        BlockGeom(x, y, SUPERBLOCK, SUPERBLOCK)
        for y in range(0, height, SUPERBLOCK)
        for x in range(0, width, SUPERBLOCK)
    ]


def encode_frame(
    frame: FramePlane,
    prev_reconstruction: Optional[FramePlane],
    quality: QualityLevel,
    params: CostModelParams,
    split_gate: GateLike = AllowAll(),
) -> EncodedFrame:
    """Search every superblock of one frame and build its reconstruction."""
    counter = EvalCounter()
    trees = []
    recon = np.empty((frame.height, frame.width), dtype=np.uint8)
    for geom in superblock_geoms(frame.width, frame.height):
        tree = rdo_search(
            geom, frame, prev_reconstruction, quality, params, split_gate, counter
        )
        trees.append(tree)
        for leaf in tree.leaves():
            reconstruct_leaf(leaf, frame, prev_reconstruction, quality, params, recon)
    distortion = 0.0
    rate = 0.0
    for tree in trees:
        distortion += tree.distortion()
        rate += tree.rate_proxy(params)
    recon_plane = FramePlane(
        width=frame.width,
        height=frame.height,
        samples=recon,
        frame_index=frame.frame_index,
        crop_width=frame.crop_width,
        crop_height=frame.crop_height,
    )
    return EncodedFrame(
        frame_index=frame.frame_index,
        quality=quality,
        trees=trees,
        reconstruction=recon_plane,
        distortion=distortion,
        rate_proxy=rate,
        leaf_evaluations=counter.leaf_evaluations,
    )


def split_degree(encoded: EncodedFrame, region: BlockGeom) -> int:
    """Max depth among prime blocks (tree leaves) overlapping the region."""
    recon = encoded.reconstruction
    if (
        region.x < 0 or region.y < 0
        or region.x + region.w > recon.width
        or region.y + region.h > recon.height
    ):
        raise OutOfBounds(f"region {region} outside {recon.width}x{recon.height}")
    best = 0
    for tree in encoded.trees:
        if not tree.geom.intersects(region):
            continue
        stack = [tree]
        while stack:
            node = stack.pop()
            if not node.geom.intersects(region):
                continue
            if node.choice == PartitionChoice.NONE:
                d = node.geom.depth
                if d > best:
                    best = d
            else:
                stack.extend(node.children)
    return best
