"""Multi-spectral leaf anomaly segmentation pipeline."""

from .labels import BACKGROUND, CLASS_NAMES, ClassLabel, N_CLASSES
from .spectral import (
    BandManifest,
    MultiSpectralImage,
    SemanticMask,
    extract_rgb,
    normalize,
    select_bands,
    validate_image,
)
from .annotations import (
    AnnotationSet,
    PolygonAnnotation,
    SplitAssignment,
    build_semantic_mask,
    parse_labelme,
    rasterize_polygon,
    split_dataset,
)
from .synth import (
    DefectSpec,
    PlateSpec,
    SpectralSignature,
    default_plate_spec,
    default_signatures,
    gen_dataset,
    gen_plate,
)
from .metrics import MetricReport, confusion_matrix, dice, iou, map50, precision_recall
from .model import (
    Checkpoint,
    ModelConfig,
    ModelOutput,
    SegmentationNet,
    adapt_first_conv,
    focus_slice,
    focus_unslice,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
