"""Desk-scale encoder-decoder over scene tokens."""

from .config import ModelConfig, TrainConfig, TINY
from .decoding import DecodeResult, DecodeSession, decode, predict_scene
from .gradcheck import gradient_check
from .network import (
    EncoderFeatures,
    SceneModel,
    cross_entropy_next_token,
    encode_point_cloud,
    point_cloud_stats,
)
from .training import (
    AdamW,
    TrainState,
    load_checkpoint,
    load_records,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamW",
    "DecodeResult",
    "DecodeSession",
    "EncoderFeatures",
    "ModelConfig",
    "SceneModel",
    "TINY",
    "TrainConfig",
    "TrainState",
    "cross_entropy_next_token",
    "decode",
    "encode_point_cloud",
    "gradient_check",
    "load_checkpoint",
    "load_records",
    "point_cloud_stats",
    "predict_scene",
    "save_checkpoint",
    "train",
]
