from .checkpoint import CheckpointError, assign_params, load_checkpoint, save_checkpoint
from .functional import (
    attention,
    categorical_logprob,
    conv1d,
    entropy,
    layer_norm,
    log_softmax,
    losses,
    masked_mse,
    mse,
    softmax,
    softmax_masked,
)
from .gradcheck import grad_check, grad_check_params, rescaled
from .optim import SGD, Adam, OptimizerState, clip_grad_norm, optimizer_step
from .tensor import (
    Graph,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    elementwise,
    exp,
    gelu,
    getitem,
    linear,
    log,
    matmul,
    mean,
    minimum,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
