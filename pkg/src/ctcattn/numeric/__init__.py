from .gradcheck import finite_diff_check
from .ops import argmax_lowest, layer_norm, linear_map, log_softmax, logsumexp, softmax, softmax_row
from .rng import SeededRng
from .tensor import ALL_TERMS, ATT, CTC, REG, Parameter, Tensor

__all__ = [
    "ALL_TERMS",
    "ATT",
    "CTC",
    "REG",
    "Parameter",
    "SeededRng",
    "Tensor",
    "argmax_lowest",
    "finite_diff_check",
    "layer_norm",
    "linear_map",
    "log_softmax",
    "logsumexp",
    "softmax",
    "softmax_row",
]
