from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .training import evaluate, joint_loss, probe_dataset, train

__all__ = [
    "Checkpoint",
    "TrainConfig",
    "evaluate",
    "joint_loss",
    "load_checkpoint",
    "probe_dataset",
    "save_checkpoint",
    "train",
]
