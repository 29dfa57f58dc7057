"""Tensor, autodiff, layers, AdamW and the weight container."""
from .tensor import Tensor, as_tensor, concat, no_grad, stack
from .functional import (avg_pool2x2, conv2d, elu, linear, relu, softmax,
                         upsample_nearest2x)
from .nn import Conv2d, Linear, Module
from .optim import AdamW, AdamWState, adamw_step, clip_grad_norm, global_norm
from .serialize import dumps, load_weights, loads, save_weights
from .gradcheck import gradcheck, module_gradcheck

__all__ = [
    "Tensor", "as_tensor", "concat", "no_grad", "stack",
    "avg_pool2x2", "conv2d", "elu", "linear", "relu", "softmax",
    "upsample_nearest2x",
    "Conv2d", "Linear", "Module",
    "AdamW", "AdamWState", "adamw_step", "clip_grad_norm", "global_norm",
    "dumps", "load_weights", "loads", "save_weights",
    "gradcheck", "module_gradcheck",
]
