"""Compressed feature quality assessment toolkit.

Pipeline: store or synthesize feature tensors, distort them with codec
simulators across a rate ladder, score the reconstructions with baseline
quality metrics, derive true semantic distortion labels from task-head
predictions, and evaluate how well each metric tracks the labels via
per-feature PLCC/SROCC. A quality-gated transmission simulator covers the
edge-to-cloud use of the same scores.
"""

from .codec import (
    CodecConfig,
    CodecKind,
    CompressedRecord,
    QuantGrid,
    block_transform_encode,
    default_ladder,
    dequantize,
    latent_surrogate_encode,
    qstep,
    rate_ladder,
    uniform_quantize,
)
from .distortion import (
    ClsLogits,
    DepthMap,
    DistortionLabel,
    SegMask,
    cls_rank,
    delta_miou,
    delta_rmse,
    miou,
    rmse,
)
from .errors import (
    CfqaError,
    ConfigError,
    CorruptError,
    DegenerateError,
    FormatError,
    RangeError,
    ShapeError,
)
from .evaluation import (
    AggregateReport,
    Series,
    SeriesCorrelation,
    aggregate,
    evaluate_series,
    plcc,
    plcc_histogram,
    srocc,
)
from .link import (
    Decision,
    GatePolicy,
    LinkTrace,
    gate,
    simulate_corpus,
    simulate_session,
)
from .metrics import Metric, Orientation, QualityScore, cosine, linear_cka, mse, score_all
from .store import (
    FeatureTensor,
    ManifestEntry,
    Task,
    flatten_2d,
    load_tensor,
    make_manifest_entry,
    read_manifest,
    restore_shape,
    save_tensor,
    synth_feature,
    validate_manifest,
    write_manifest,
)

__version__ = "0.1.0"
