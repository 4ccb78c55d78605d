from .backend import BACKEND_NAME, COMPILED
from .lstm import BiLstmParams, LstmCellParams, bilstm_forward, lstm_cell_step, lstm_forward
from .adam import AdamState, adam_step, clip_global_norm
from .checkpoint import load_arrays, save_arrays
from .tape import Tensor, backward, constant, grad_or_zero, param

__all__ = [
    "BACKEND_NAME",
    "COMPILED",
    "BiLstmParams",
    "LstmCellParams",
    "bilstm_forward",
    "lstm_cell_step",
    "lstm_forward",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "load_arrays",
    "save_arrays",
    "Tensor",
    "backward",
    "constant",
    "grad_or_zero",
    "param",
]
