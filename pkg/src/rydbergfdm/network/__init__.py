"""From-scratch CNN + Bi-LSTM decoder.

Training helpers live in ``rydbergfdm.network.training``.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import (
    BatchNormParams,
    Conv1DParams,
    DenseParams,
    LSTMParams,
    batchnorm_forward,
    bilstm_forward,
    conv1d_forward,
    dense_forward,
    lstm_step,
    maxpool1d,
    minmax_scale,
    mse_loss,
    relu,
)
from .model import DecoderNetwork, gradient_check, network_backward
from .optim import PlateauSchedule, plateau_lr, rmsprop_step

__all__ = [
    "BatchNormParams",
    "Checkpoint",
    "Conv1DParams",
    "DecoderNetwork",
    "DenseParams",
    "LSTMParams",
    "PlateauSchedule",
    "batchnorm_forward",
    "bilstm_forward",
    "conv1d_forward",
    "dense_forward",
    "gradient_check",
    "load_checkpoint",
    "lstm_step",
    "maxpool1d",
    "minmax_scale",
    "mse_loss",
    "network_backward",
    "plateau_lr",
    "relu",
    "rmsprop_step",
    "save_checkpoint",
]
