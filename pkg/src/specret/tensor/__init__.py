"""Dense float64 tensors with reverse-mode autodiff, transformer layers and AdamW."""

from .autograd import (
    NotScalar,
    ShapeMismatch,
    Tensor,
    as_tensor,
    backward,
    concat,
    binary_cross_entropy_with_logits,
    cross_entropy,
    embedding,
    gelu,
    layer_norm,
    log_softmax,
    masked_mean,
    matmul,
    no_grad,
    softmax,
    stack,
)
from .nn import attention, causal_mask, multi_head
from .params import (
    GROUPS,
    ModelParams,
    OptimizerConfig,
    adamw_step,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "GROUPS", "ModelParams", "NotScalar", "OptimizerConfig", "ShapeMismatch", "Tensor",
    "adamw_step", "as_tensor", "attention", "backward", "binary_cross_entropy_with_logits",
    "causal_mask", "concat",
    "cross_entropy", "embedding", "gelu", "layer_norm", "load_checkpoint", "log_softmax",
    "masked_mean", "matmul", "multi_head", "no_grad", "save_checkpoint", "softmax", "stack",
]
