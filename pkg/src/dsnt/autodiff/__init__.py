from .tensor import (
    DTYPE, ShapeError, Tape, Tensor, add, as_tensor, backward, concat, cross_entropy,
    current_tape, dropout, dropout_mask, embedding_lookup, exp, log, log_softmax, matmul,
    matvec, mean, mul, parameter, relu, reshape, scale, sigmoid, slice_, softmax, stack,
    sub, sum_, take, tanh, transpose,
)
from .optim import (
    Optimizer, OptimizerConfig, OptimizerState, adagrad_step, adam_step,
    clip_by_global_norm, global_norm, sgd_step,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
