"""Small reverse-mode autodiff engine and the layers the policy needs."""
from .core import (Tensor, add, as_tensor, backward, concat, conv2d, exp, getitem, kl_gaussian, l1_loss,
                   layer_norm, matmul, mean, mul, relu, reshape, softmax, sub, transpose)
from .core import sum as tsum
from .io import decode_weights, encode_weights, load_weights, save_weights
from .nn import (feed_forward, linear, multihead_attention, sinusoidal_embed_1d, sinusoidal_embed_2d,
                 uniform_init)
from .optim import ParamStore, adam_step

__all__ = [
    "Tensor", "add", "as_tensor", "backward", "concat", "conv2d", "exp", "getitem", "kl_gaussian",
    "l1_loss", "layer_norm", "matmul", "mean", "mul", "relu", "reshape", "softmax", "sub", "transpose",
    "tsum", "decode_weights", "encode_weights", "load_weights", "save_weights", "feed_forward", "linear",
    "multihead_attention", "sinusoidal_embed_1d", "sinusoidal_embed_2d", "uniform_init", "ParamStore",
    "adam_step",
]
