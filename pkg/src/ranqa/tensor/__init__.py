"""Dense tensors with reverse-mode differentiation, optimizers and checkpoints."""
from . import ops
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .core import (
    ConsistencyError,
    GradReport,
    NonFiniteError,
    ParamStore,
    ShapeError,
    StateError,
    Tensor,
    as_tensor,
    backward,
    grad,
    no_grad,
)
from .optim import clip_weights, optimizer_step

__all__ = [
    "ops", "Tensor", "ParamStore", "GradReport", "backward", "grad", "no_grad", "as_tensor",
    "optimizer_step", "clip_weights", "save_checkpoint", "load_checkpoint",
    "CheckpointFormatError", "ShapeError", "StateError", "ConsistencyError", "NonFiniteError",
]
