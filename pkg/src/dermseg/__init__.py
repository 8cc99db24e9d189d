"""Deterministic dermoscopy lesion and attribute segmentation pipeline."""

from .errors import (
    DataError,
    DermsegError,
    DimensionError,
    PredictorContractError,
    ValidationError,
)
from .rasters import (
    BinaryMask,
    Image,
    LossCoefficients,
    NormalizedImage,
    ProbabilityMap,
    ThresholdPair,
    map_stats,
    pixelwise_multiply,
    threshold,
)
from .manifest import (
    AttributeKind,
    ATTRIBUTE_KINDS,
    DatasetRecord,
    Manifest,
    assign_folds,
    load_manifest,
    subsample_negatives,
    write_manifest,
)
from .preprocess import NormalizationConstants, denormalize, normalize, resize, task_resize_target
from .losses import jaccard_bce_loss, loss_gradient, modified_jaccard_loss
from .metrics import (
    ConfusionCounts,
    MetricReport,
    confusion,
    evaluate_task1,
    metrics_from_confusion,
    pooled_attribute_metrics,
)
from .postprocess import (
    GridSearchSpec,
    attribute_postprocess,
    grid_search,
    largest_component,
    lesion_postprocess,
    morphological_reconstruct,
)
from .tta import (
    PredictionAudit,
    ensemble_mean,
    fold_ensemble,
    predict_with_tta,
    tta_expand,
    tta_merge,
)
from .predictors import BaselinePredictor, CommandPredictor, FixturePredictor

__version__ = "0.1.0"
