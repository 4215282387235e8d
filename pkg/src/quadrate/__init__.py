"""quadrate: a multi-rate quadtree RDO encoding simulator.

A self-contained luma-only encoder model for studying how much of the
partition search a rate ladder can skip: a full-search reference instance
guides local instances through reference-pruned or Bayesian-gated searches,
and the package quantifies the resulting speed/quality tradeoff.
"""

from .frame_io import (
    FramePlane,
    StreamInfo,
    SynthSpec,
    generate_synthetic,
    load_sequence,
    pad_plane,
)
from .rdo_core import (
    AllowAll,
    BlockGeom,
    CostModelParams,
    DenyAll,
    EncodedFrame,
    EvalCounter,
    LeafMode,
    PartitionChoice,
    PartitionTree,
    QualityLevel,
    brute_force_rdo,
    depth_of,
    encode_frame,
    leaf_cost,
    rdo_search,
    split_degree,
)
from .inference import (
    BayesParams,
    CountTables,
    GateContext,
    GateDecision,
    PriorModel,
    fit_prior,
    gate_decision,
    keyed_uniform,
    likelihoods,
    posterior,
    prior_split_prob,
    update_tables,
)
from .multirate import (
    EncodeMode,
    InstanceResult,
    MultiRateReport,
    Schedule,
    calibrate_prior,
    classify_frame,
    encode_instance,
    run_multirate,
)
from .metrics import (
    PosteriorHistogram,
    PruningBoundReport,
    RdPoint,
    bd_rate,
    depth_area_stats,
    depth_compare_stats,
    frame_psnr,
    posterior_histogram,
    pruning_bound_report,
    time_saving,
)
from .clips import BUNDLED_CLIPS, clip_names, load_clip

__version__ = "0.1.0"
