"""Small shared-encoder network for joint segmentation and depth."""
from .losses import depth_loss, ecl_loss, seg_loss
from .network import ToyNetParams, decode_depth, forward, init_params, predict
from .objectives import LOSS_MODES, adv_gradient, adv_loss, total_loss_grads
from .training import TrainConfig, TrainingDiverged, train

__all__ = [
    "LOSS_MODES",
    "ToyNetParams",
    "TrainConfig",
    "TrainingDiverged",
    "adv_gradient",
    "adv_loss",
    "decode_depth",
    "depth_loss",
    "ecl_loss",
    "forward",
    "init_params",
    "predict",
    "seg_loss",
    "total_loss_grads",
    "train",
]
