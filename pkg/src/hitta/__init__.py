"""Human-in-the-loop test-time adaptation for optic disc/cup segmentation.

The package splits adaptation around the moment a prediction is shown to a
reviewer: before it, normalization statistics and affines align the model to
the incoming image's appearance; after it, the reviewer's corrected mask
teaches a small preference head (and, gently, the backbone) that reviewer's
annotation style. A synthetic multi-domain benchmark, a streaming evaluation
harness, and an HTTP service for live review sessions complete the loop.
"""

from .backbone import (
    AdaptiveBatchNorm,
    ArchConfig,
    ForwardOutput,
    SegNetwork,
    bn_forward,
    init_network,
    load_checkpoint,
    param_fingerprint,
    save_checkpoint,
)
from .config import ALL_METHODS, RunConfig, load_run_config, run_config_from_dict
from .datagen import (
    DatasetConfig,
    DomainStyleSpec,
    Sample,
    SourceTrainConfig,
    SyntheticDataset,
    generate_dataset,
    generate_sample,
    normalize,
    train_source,
)
from .errors import (
    ConfigError,
    DegenerateMaskError,
    HittaError,
    NumericError,
    ShapeError,
    StatisticsError,
    ValidationError,
)
from .feedback_adapt import (
    FeedbackRecord,
    PostAdaptConfig,
    PreferenceHead,
    head_forward,
    init_head,
    post_inference_adapt,
    select_mask,
    select_presented,
)
from .harness import (
    StreamReport,
    StreamRunner,
    build_stream,
    compare_reports,
    export_overlays,
    run_matrix,
    run_stream,
)
from .methods import MethodSpec, resolve_method, stage_configs
from .objectives import (
    DscResult,
    LossValue,
    cross_entropy_loss,
    divergence_loss,
    divergence_map,
    dsc,
    entropy_map,
    feedback_loss,
    prediction_entropy,
    soft_dice_loss,
)
from .oracle import CorrectionPolicy, PreferenceProfile, apply_preference, correct
from .pre_adapt import PreAdaptConfig, PreAdaptResult, pre_inference_adapt, reestimate_bn
from .rle import decode_mask, encode_mask
from .styleaug import AugBatch, AugmentationRanges, AugmentationSpec, apply_style, make_test_batch

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
