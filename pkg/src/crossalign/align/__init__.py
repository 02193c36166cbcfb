"""Embedding encoders, contrastive/detection losses, optimisation and training."""

from crossalign.align.encoders import EncoderParams, encode, encode_backward, init_encoder, l2_normalize
from crossalign.align.losses import (
    AlignmentBatch,
    DetectionInputs,
    DetectionLoss,
    LossConfig,
    class_prototypes,
    classification_loss,
    cross_view_loss,
    detection_set_loss,
    mil_nce_loss,
    total_loss,
)
from crossalign.align.optim import AdamState, adam_step, finite_diff_gradcheck
from crossalign.align.train import (
    FeatureTableProvider,
    TrainConfig,
    TrainingData,
    TrainingDiverged,
    TrainResult,
    TrainState,
    build_training_data,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamState",
    "AlignmentBatch",
    "DetectionInputs",
    "DetectionLoss",
    "EncoderParams",
    "FeatureTableProvider",
    "LossConfig",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "TrainingData",
    "TrainingDiverged",
    "adam_step",
    "build_training_data",
    "class_prototypes",
    "classification_loss",
    "cross_view_loss",
    "detection_set_loss",
    "encode",
    "encode_backward",
    "finite_diff_gradcheck",
    "init_encoder",
    "l2_normalize",
    "load_checkpoint",
    "mil_nce_loss",
    "save_checkpoint",
    "total_loss",
    "train",
]
