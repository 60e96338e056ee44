from .gradcheck import check_gradients, numeric_gradient, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    default_dtype,
    div,
    exp,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    l2_normalize,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    scale,
    set_default_dtype,
    sigmoid,
    sqrt,
    square,
    sub,
    swapaxes,
    tabs,
    tanh,
    transpose,
    tsum,
    unbroadcast,
)
