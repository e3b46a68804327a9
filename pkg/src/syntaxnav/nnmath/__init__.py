"""Minimal dense-tensor core: autograd tape, LSTM cell, RMSProp, gradient oracle."""

from .autograd import (
    AutogradError,
    DetachedLoss,
    EmptyInput,
    NonFiniteValue,
    NotScalar,
    ShapeMismatch,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    exp,
    getitem,
    log,
    log_softmax,
    lstm_cell,
    matmul,
    mean,
    mul,
    neg,
    no_tape,
    relu,
    scale,
    sigmoid,
    softmax,
    softmax_np,
    square,
    stack,
    sub,
    take_rows,
    tanh,
    tensor,
    tsum,
)
from .gradcheck import GradCheckResult, NonDeterministicFunction, grad_check, relative_error
from .params import (
    Checkpoint,
    CheckpointError,
    ParameterSet,
    config_hash,
    load_checkpoint,
    rmsprop_step,
    save_checkpoint,
)
