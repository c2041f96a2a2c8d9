"""Audio-conditioned U-Net for locating the score region that matches an audio excerpt."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import ConditionedUNet, ModelConfig, build_model, parse_film_blocks
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, dice_loss, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConditionedUNet",
    "ModelConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_model",
    "dice_loss",
    "load_checkpoint",
    "no_grad",
    "parse_film_blocks",
    "save_checkpoint",
    "train",
]
