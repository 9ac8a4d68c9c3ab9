from .adapt import ADAPT_MODES, adapt_first_conv, adapt_sliced_stem
from .attention import EncoderBlock, MultiHeadSelfAttention, TransformerEncoder
from .blocks import Conv, CSPStage, SPP, focus_slice, focus_unslice
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, STRIDES
from .network import ModelOutput, SegmentationNet
from .postprocess import (
    compose_instance_masks,
    decode_boxes,
    greedy_nms,
    semantic_from_instances,
    semantic_from_scores,
)

__all__ = [
    "ADAPT_MODES",
    "adapt_first_conv",
    "adapt_sliced_stem",
    "EncoderBlock",
    "MultiHeadSelfAttention",
    "TransformerEncoder",
    "Conv",
    "CSPStage",
    "SPP",
    "focus_slice",
    "focus_unslice",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "ModelConfig",
    "STRIDES",
    "ModelOutput",
    "SegmentationNet",
    "compose_instance_masks",
    "decode_boxes",
    "greedy_nms",
    "semantic_from_instances",
    "semantic_from_scores",
]
