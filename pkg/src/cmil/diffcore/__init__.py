"""Minimal reverse-mode autodiff, dense nets, Gaussian heads and Adam."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import (
    Graph,
    Param,
    Tensor,
    as_tensor,
    clip_min,
    concat,
    elu,
    exp,
    linear,
    log,
    minimum,
    relu,
    sigmoid,
    softplus,
    sqrt,
    square,
    stack,
    tanh,
    where,
    zero_grad,
)
from .nn import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    MLP,
    DiagGaussian,
    EnsembleMLP,
    Module,
    forward,
    gaussian_head,
    gaussian_kl,
    gaussian_logprob,
    squash_log_std,
)
from .optim import Adam, AdamState, adam_step


def backward(graph: Graph, loss: Tensor) -> None:
    graph.backward(loss)
