"""Token-wise distillation divergences with analytic gradients."""

__version__ = "0.1.0"

from .core import DistSeq, ProbRatio, VocabDist, log_ratio, pearson_similarity, softmax
from .divergences import KINDS, DivergenceSpec, token_loss_matrix, total_divergence
from .gradients import GradMatrix, chain_to_logits, fd_oracle, loss_and_grad
from .weighting import TokenWeightMatrix, alpha, alpha_matrix, step_weight

__all__ = [
    "DistSeq",
    "DivergenceSpec",
    "GradMatrix",
    "KINDS",
    "ProbRatio",
    "TokenWeightMatrix",
    "VocabDist",
    "alpha",
    "alpha_matrix",
    "chain_to_logits",
    "fd_oracle",
    "log_ratio",
    "loss_and_grad",
    "pearson_similarity",
    "softmax",
    "step_weight",
    "token_loss_matrix",
    "total_divergence",
]
