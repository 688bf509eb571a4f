from .attention import gta_attention, selective_pool
from .backbone import backbone_forward
from .dpm import KeyPointSet, dpm_refine, find_keypoints, position_mask, segment_length, select_keypoints
from .network import dpm_forward, embed, embed_sequences, gta_forward, head_forward, length_mask, pad_batch
from .params import PavenetConfig, PavenetParams, init_params

__all__ = [
    "KeyPointSet",
    "PavenetConfig",
    "PavenetParams",
    "backbone_forward",
    "dpm_forward",
    "dpm_refine",
    "embed",
    "embed_sequences",
    "find_keypoints",
    "gta_attention",
    "gta_forward",
    "head_forward",
    "init_params",
    "length_mask",
    "pad_batch",
    "position_mask",
    "segment_length",
    "select_keypoints",
    "selective_pool",
]
