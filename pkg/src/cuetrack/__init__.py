"""Textual-cue heatmap mapping and guidance fusion for tracking pipelines."""

from .bundle_io import (
    FeatureBundle,
    ScaleLayout,
    TokenGrid,
    read_boxes,
    read_bundle,
    read_token_grid,
    slice_scale,
    write_boxes,
    write_bundle,
    write_token_grid,
)
from .cue_mapping import (
    Heatmap,
    attention_map,
    map_textual_cue,
    normalize,
    read_heatmap,
    refine,
    scale_survey,
    write_heatmap,
    write_heatmap_pgm,
)
from .errors import (
    BadMagicError,
    ConfigError,
    CuetrackError,
    EmptyTextError,
    FormatError,
    InputError,
    LayoutError,
    NonFiniteValueError,
    NumericError,
    ShapeError,
    TrainingError,
    TruncatedPayloadError,
    VersionError,
)
from .guidance import (
    GuidanceWeights,
    encode_heatmap,
    fuse,
    fuse_backward,
    init_weights,
    load_weights,
    save_weights,
)
from .metrics import MetricsReport, emit_report, evaluate, iou, parse_report
from .numerics import (
    ConvLayer,
    bilinear_resize,
    conv_backward,
    conv_forward,
    finite_diff_check,
    matmul,
    mean_last_dim,
    reshape_to_2d,
)
from .synthetic import (
    STRATEGIES,
    SyntheticSpec,
    TrackRecord,
    generate_bundle,
    run_tracker,
    train_guidance,
)

__version__ = "0.1.0"
