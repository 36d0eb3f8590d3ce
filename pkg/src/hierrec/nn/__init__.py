from . import autodiff, functional
from .functional import bce_loss, sigmoid, softmax_rows
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    BatchNormState,
    FcStackConfig,
    fc_stack,
    fc_stack_forward,
    init_fc_stack,
    make_param_vars,
)
from .optim import adam_step
from .params import ParameterStore, embedding_init, glorot_uniform

__all__ = [
    "autodiff",
    "functional",
    "bce_loss",
    "sigmoid",
    "softmax_rows",
    "GradCheckReport",
    "grad_check",
    "BatchNormState",
    "FcStackConfig",
    "fc_stack",
    "fc_stack_forward",
    "init_fc_stack",
    "make_param_vars",
    "adam_step",
    "ParameterStore",
    "embedding_init",
    "glorot_uniform",
]
