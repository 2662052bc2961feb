"""Budget-aware quality estimation over layerwise scorer trajectories."""

from .dataset import (
    CandidatePool,
    DatasetError,
    FertilityTable,
    LayerTrajectory,
    ParseError,
    SegmentRecord,
    ValidationError,
    fertility_lookup,
    group_pools,
    load_fertility_table,
    load_records,
    save_records,
)
from .metrics import (
    CalibrationConfig,
    CurvePoint,
    UndefinedCorrelationError,
    calibration_curve,
    macro_average,
    pearson,
    rerank_quality,
    spearman,
)
from .synth import SynthConfig, generate_pool, generate_pools, generate_segments, generate_trajectory
from .exitpolicy import (
    ExitPolicyConfig,
    ExitResult,
    budget_sweep,
    confidence_exit,
    constant_exit,
    variance_exit,
)
from .bandit import (
    BanditConfig,
    BanditResult,
    BanditTrace,
    PruneSchedule,
    bandit_rerank,
    baseline_select,
    layer_snapshot,
    mae_to_sigma,
    prefix_cutoff,
    rerank_pools,
    staged_prune,
    ucb_score,
)
from .deferral import DeferralPolicy, defer_select, deferral_curve, length_bias
from .heads import (
    LossConfig,
    ToyLayerStack,
    ToyRegressorHead,
    cumulative_layer_loss,
    finite_diff_check,
    instant_confidence_loss,
    self_confidence_loss,
    train_toy_heads,
)

__version__ = "0.1.0"
