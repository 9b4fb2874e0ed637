"""Adversarial attack laboratory for a two-stage detect-then-recognize pipeline."""

from .attacks import (
    AttackConfig,
    AttackOutcome,
    baseline_reinsert_attack,
    boundary_search,
    eot_crop_robust_attack,
    hop_skip_jump,
    kos_attack,
    pgd_targeted,
)
from .errors import (
    AdvPipeError,
    ConfigInvalid,
    DimensionMismatch,
    EmptyInput,
    GateFailed,
    InvalidInitialization,
    IOFailure,
    NoInkFound,
    OutOfBounds,
    TargetLengthMismatch,
    TrainingDiverged,
    UnknownSymbol,
)
from .glyphs import (
    DocumentSample,
    canonical_crop,
    glyph_template,
    make_training_set,
    render_document,
    render_glyph,
    train,
)
from .harness import ExperimentConfig, emit_report, emit_summary, run_experiment
from .metrics import MetricBundle, SummaryRow, aggregate, levenshtein, mse
from .nn import (
    GradientPair,
    NetworkParams,
    forward,
    init_params,
    load_params,
    loss_and_input_grad,
    param_grad,
    save_params,
    sgd_step,
)
from .pipeline import PipelineHandle, RegionSpec, crop, reinsert, same_domain

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
