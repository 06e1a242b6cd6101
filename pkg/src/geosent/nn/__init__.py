from .functional import (
    bce_grad, bce_loss, bilstm, conv1d, dense, dropout, embedding, maxpool1d, sigmoid,
)
from .gradcheck import grad_check, grad_check_all
from .model import ModelSpec, TrainedModel, build_model
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "ModelSpec", "TrainedModel", "adam_step", "bce_grad", "bce_loss",
    "bilstm", "build_model", "conv1d", "dense", "dropout", "embedding", "grad_check",
    "grad_check_all", "maxpool1d", "sigmoid",
]
