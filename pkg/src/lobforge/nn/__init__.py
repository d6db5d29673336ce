"""Small numpy neural-network toolkit with exact backward passes."""
from ._backend import BACKEND, available_backends
from .gradcheck import GradCheckReport, grad_check, rel_error
from .layers import (LSTM, Conv2d, Dense, Flatten, MaxPool2d, Module, Param, ReLU, Reshape,
                     Sequential, Sigmoid, Tanh, conv2d_backward, conv2d_forward, dense_backward,
                     dense_forward, lstm_step_backward, lstm_step_forward, maxpool2d_backward,
                     maxpool2d_forward, mse_loss, relu, sigmoid, tanh)
from .optim import Adam, adam_update
from .rng import Rng, seeded_init

__all__ = [
    "BACKEND", "available_backends", "GradCheckReport", "grad_check", "rel_error",
    "LSTM", "Conv2d", "Dense", "Flatten", "MaxPool2d", "Module", "Param", "ReLU", "Reshape",
    "Sequential", "Sigmoid", "Tanh", "conv2d_backward", "conv2d_forward", "dense_backward",
    "dense_forward", "lstm_step_backward", "lstm_step_forward", "maxpool2d_backward",
    "maxpool2d_forward", "mse_loss", "relu", "sigmoid", "tanh", "Adam", "adam_update",
    "Rng", "seeded_init",
]
