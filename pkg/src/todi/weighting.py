"""ToDi token weights: alpha = sigmoid(beta * log(p / q)), held constant under differentiation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DistSeq, ProbRatio
from .errors import InvalidInputError, InvalidParameterError


def sigmoid(x):
    """Branch-stable logistic function; never evaluates exp of a positive number."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def _check_beta(beta) -> float:
    beta = float(beta)
    if math.isnan(beta):
        raise InvalidParameterError("beta must not be NaN")
    return beta


def alpha(log_r, beta: float = 1.0) -> float:
    """Weight for a single token given its log-ratio (a float or a ProbRatio).

    ``beta = +inf`` selects the step limit (ties map to 0.5).
    """
    beta = _check_beta(beta)
    lr = log_r.log_r if isinstance(log_r, ProbRatio) else float(log_r)
    if not math.isfinite(lr):
        raise InvalidInputError("log-ratio must be finite")
    if math.isinf(beta):
        if beta < 0:
            raise InvalidParameterError("beta = -inf is not supported")
        return 1.0 if lr > 0 else (0.0 if lr < 0 else 0.5)
    if beta == 0.0:
        return 0.5
    return float(sigmoid(beta * lr))


def alpha_from_log_ratio(log_r: np.ndarray, beta: float) -> np.ndarray:
    beta = _check_beta(beta)
    log_r = np.asarray(log_r, dtype=np.float64)
    if math.isinf(beta):
        if beta < 0:
            raise InvalidParameterError("beta = -inf is not supported")
        return np.where(log_r > 0, 1.0, np.where(log_r < 0, 0.0, 0.5))
    if beta == 0.0:
        return np.full(log_r.shape, 0.5)
    return np.asarray(sigmoid(beta * log_r))


@dataclass(frozen=True)
class TokenWeightMatrix:
    """Materialized alpha values. Consumers treat these as plain data."""

    alpha: np.ndarray
    beta: float
    grad_constant: bool = True

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64, copy=True)
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)


def _seq_logs(seq) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(seq, DistSeq):
        return seq.log_probs, seq.mask
    d = DistSeq.from_probs(seq)
    return d.log_probs, d.mask


def _matrix(p_seq, q_seq, beta, mask) -> TokenWeightMatrix:
    logp, pm = _seq_logs(p_seq)
    logq, qm = _seq_logs(q_seq)
    if logp.shape != logq.shape:
        raise InvalidInputError(f"shape mismatch {logp.shape} vs {logq.shape}")
    keep = (pm & qm) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != (logp.shape[0],):
        raise InvalidInputError("mask length does not match T")
    a = alpha_from_log_ratio(logp - logq, beta)
    a = np.where(keep[:, None], a, 0.5)
    return TokenWeightMatrix(a, float(beta))


def alpha_matrix(p_seq, q_seq, beta: float = 1.0, mask=None) -> TokenWeightMatrix:
    """Elementwise weights over unmasked rows; masked rows are set to 0.5."""
    return _matrix(p_seq, q_seq, beta, mask)


def step_weight(p_seq, q_seq, mask=None) -> TokenWeightMatrix:
    """Indicator weights 1[p > q] with ties at 0.5 (the beta -> inf limit)."""
    return _matrix(p_seq, q_seq, math.inf, mask)
