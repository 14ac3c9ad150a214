"""Minimal float64 tensor engine with reverse-mode autodiff and Adam."""

from rdeepsc.engine import ops
from rdeepsc.engine.gradcheck import finite_diff_check
from rdeepsc.engine.ops import (
    calibrated_softmax,
    elementwise,
    embedding_lookup,
    layer_norm,
    log_softmax,
    matmul,
    softmax,
)
from rdeepsc.engine.optim import Adam, AdamState, adam_step
from rdeepsc.engine.tensor import (
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad,
    no_record,
    record,
)

__all__ = [
    "Adam",
    "AdamState",
    "DomainError",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "calibrated_softmax",
    "elementwise",
    "embedding_lookup",
    "finite_diff_check",
    "grad",
    "layer_norm",
    "log_softmax",
    "matmul",
    "no_record",
    "ops",
    "record",
    "softmax",
]
