from .engine import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    cross_entropy,
    einsum,
    gather_rows,
    gelu,
    getitem,
    layer_norm,
    log_softmax,
    matmul,
    mean_all,
    mul,
    reshape,
    scale,
    segment_sum,
    sigmoid,
    softmax,
    sub,
    sum_all,
)
from .gradcheck import GradReport, grad_check, rel_err
from .optim import AdamWState, adamw_step, sgd_step
from .params import ParameterStore, load_state, save_state, truncated_normal

DiffValue = Tensor
