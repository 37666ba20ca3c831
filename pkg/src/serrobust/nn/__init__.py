from .checkpoint import load_model, load_tensors, save_model, save_tensors
from .layers import (cross_entropy, gru_cell_backward, gru_cell_forward, loss,
                     softmax, softmax_cross_entropy)
from .model import Model, ModelConfig, init_params

__all__ = ["Model", "ModelConfig", "init_params", "load_model", "save_model",
           "load_tensors", "save_tensors", "gru_cell_forward", "gru_cell_backward",
           "softmax", "softmax_cross_entropy", "cross_entropy", "loss"]
