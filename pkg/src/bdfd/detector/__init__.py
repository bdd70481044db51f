from .loss import LossWeights, multibox_loss
from .model import DetectorModel, detect, detect_many, forward, init_model
from .train import TrainConfig, TrainingDiverged, TrainResult, loss_and_grads, train

__all__ = [
    "DetectorModel", "LossWeights", "TrainConfig", "TrainResult", "TrainingDiverged",
    "detect", "detect_many", "forward", "init_model", "loss_and_grads", "multibox_loss", "train",
]
