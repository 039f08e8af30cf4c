from motionsim.net.model import BlockSpec, MotionNet, NetConfig, full_config, toy_config
from motionsim.net.optim import AdamW
from motionsim.net.train import (
    LabeledDataset,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    split_indices,
    train,
)

__all__ = [
    "BlockSpec",
    "NetConfig",
    "MotionNet",
    "full_config",
    "toy_config",
    "AdamW",
    "TrainConfig",
    "LabeledDataset",
    "TrainingDivergedError",
    "split_indices",
    "train",
    "evaluate",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]
