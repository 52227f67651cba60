from braillespeech.tensor_core.gradcheck import GradCheckResult, grad_check
from braillespeech.tensor_core.optim import OptimState, ones, optimizer_step, scheduled_lr, uniform_init, zeros
from braillespeech.tensor_core.tensor import (
    OPS,
    Tensor,
    add,
    backward,
    concat,
    conv1d,
    cross_entropy,
    default_dtype,
    embedding_lookup,
    exp,
    forward_op,
    gather,
    l2_normalize,
    layer_norm,
    mae,
    masked_select,
    matmul,
    mean,
    mean_pool,
    mse,
    mul,
    precision,
    relu,
    reshape,
    scale,
    slice_,
    softmax,
    sub,
    sum_,
    transpose,
)
