"""Closed-form derivatives of the divergences and a finite-difference oracle.

Derivatives are first taken with respect to the student probabilities q_i
treated as free coordinates, then pushed through the softmax Jacobian to get
logit gradients. ToDi weights enter only as data (see ``weighting``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core import DistSeq, log_softmax
from .divergences import LN2, DivergenceSpec, spec_alpha, token_terms
from .errors import InvalidInputError, InvalidParameterError, OracleFailureError


def grad_fkl_q(p_i, q_i):
    return -np.asarray(p_i, dtype=np.float64) / q_i if np.ndim(p_i) else -float(p_i) / float(q_i)


def grad_rkl_q(p_i, q_i):
    if np.ndim(p_i) or np.ndim(q_i):
        return np.log(np.asarray(q_i, dtype=np.float64) / p_i) + 1.0
    return math.log(float(q_i) / float(p_i)) + 1.0


def grad_jeffreys_q(p_i, q_i):
    return grad_fkl_q(p_i, q_i) + grad_rkl_q(p_i, q_i)


def grad_todi_q(p_i, q_i, alpha_i):
    """ToDi derivative with alpha held fixed: alpha * FKL' + (1 - alpha) * RKL'."""
    return alpha_i * grad_fkl_q(p_i, q_i) + (1.0 - alpha_i) * grad_rkl_q(p_i, q_i)


# -- log-space kernels used by the matrix paths -----------------------------


def _fkl_q(logp, logq):
    return -np.exp(logp - logq)


def _rkl_q(logp, logq):
    return logq - logp + 1.0


def grad_q_terms(spec: DivergenceSpec, logp, logq, alpha=None) -> np.ndarray:
    """Elementwise dD/dq_i for any kind, given log-probabilities."""
    logp = np.asarray(logp, dtype=np.float64)
    logq = np.asarray(logq, dtype=np.float64)
    k = spec.kind
    if k == "FKL":
        return _fkl_q(logp, logq)
    if k == "RKL":
        return _rkl_q(logp, logq)
    if k == "JS":
        logm = np.logaddexp(logp, logq) - LN2
        return 0.5 * (logq - logm)
    if k == "TVD":
        return 0.5 * np.sign(np.exp(logq) - np.exp(logp))
    if k == "SKL":
        lam = spec.lam
        logmix = np.logaddexp(math.log(lam) + logp, math.log1p(-lam) + logq)
        return -(1.0 - lam) * np.exp(logp - logmix)
    if k == "SRKL":
        lam = spec.lam
        logmix = np.logaddexp(math.log1p(-lam) + logp, math.log(lam) + logq)
        return logq - logmix + 1.0 - lam * np.exp(logq - logmix)
    if k == "FixedMix":
        w = spec.mix_ratio
        return w * _fkl_q(logp, logq) + (1.0 - w) * _rkl_q(logp, logq)
    if k == "Jeffreys":
        return _fkl_q(logp, logq) + _rkl_q(logp, logq)
    if alpha is None:
        alpha = spec_alpha(spec, logp, logq)
    return alpha * _fkl_q(logp, logq) + (1.0 - alpha) * _rkl_q(logp, logq)


def chain_to_logits(d_loss_d_q, q_seq, mask=None) -> np.ndarray:
    """Apply the softmax Jacobian row-wise: g_k = q_k * (u_k - sum_j q_j u_j)."""
    u = np.asarray(d_loss_d_q, dtype=np.float64)
    if isinstance(q_seq, DistSeq):
        q = q_seq.probs
        if mask is None:
            mask = q_seq.mask
    else:
        q = np.asarray(q_seq, dtype=np.float64)
    if u.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {u.shape} vs {q.shape}")
    g = q * (u - np.sum(q * u, axis=-1, keepdims=True))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != q.shape[:-1]:
            raise InvalidInputError("mask does not match the leading shape")
        g = np.where(mask[..., None], g, 0.0)
    return g


@dataclass(frozen=True)
class GradMatrix:
    d_loss_d_q: np.ndarray
    d_loss_d_logits: np.ndarray


def loss_and_grad(
    spec: DivergenceSpec,
    logp: np.ndarray,
    logits: np.ndarray,
    mask=None,
    normalize: bool = False,
    alpha=None,
    weights=None,
) -> tuple[float, GradMatrix]:
    """Divergence between fixed teacher log-probs and softmax(logits), with its logit gradient.

    For the ToDi kinds alpha is materialized from the current point (or taken
    from the caller) before any derivative is formed. Optional per-row
    ``weights`` scale each position's contribution (masked rows stay zero).
    """
    logp = np.asarray(logp, dtype=np.float64)
    logq = log_softmax(logits)
    if logp.shape != logq.shape:
        raise InvalidInputError(f"shape mismatch {logp.shape} vs {logq.shape}")
    if mask is None:
        mask = np.ones(logq.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if alpha is None:
        alpha = spec_alpha(spec, logp, logq)
    w = mask.astype(np.float64)
    if weights is not None:
        w = w * np.asarray(weights, dtype=np.float64)
    w = w[..., None]
    values = np.where(w != 0, w * token_terms(spec, logp, logq, alpha), 0.0)
    u = np.where(w != 0, w * grad_q_terms(spec, logp, logq, alpha), 0.0)
    g = chain_to_logits(u, np.exp(logq), mask)
    loss = float(values.sum())
    if normalize:
        n = int(mask.sum())
        scale = 1.0 / n if n else 0.0
        loss *= scale
        u = u * scale
        g = g * scale
    return loss, GradMatrix(u, g)


def fd_oracle(
    loss: Callable[[np.ndarray], float],
    logits,
    step: float = 1e-6,
    batched: bool = False,
) -> np.ndarray:
    """Central differences (L(z + h e_k) - L(z - h e_k)) / 2h for every coordinate.

    With ``batched=True`` the loss must accept a stack of shape (N, *logits.shape)
    and return N values; all perturbations are then evaluated in one call.
    """
    if not 1e-8 <= step <= 1e-4:
        raise InvalidParameterError(f"step must lie in [1e-8, 1e-4], got {step}")
    z = np.array(logits, dtype=np.float64)
    n = z.size
    if batched:
        eye = np.eye(n).reshape((n,) + z.shape) * step
        stack = np.concatenate([z + eye, z - eye])
        vals = np.asarray(loss(stack), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise OracleFailureError("non-finite loss during finite differencing")
        return ((vals[:n] - vals[n:]) / (2 * step)).reshape(z.shape)
    out = np.empty(n)
    flat = z.reshape(-1)
    for k in range(n):
        old = flat[k]
        flat[k] = old + step
        hi = loss(z)
        flat[k] = old - step
        lo = loss(z)
        flat[k] = old
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise OracleFailureError(f"non-finite loss at coordinate {k}")
        out[k] = (hi - lo) / (2 * step)
    return out.reshape(z.shape)


def divergence_loss_fn(spec: DivergenceSpec, logp, mask=None, alpha=None):
    """Batched scalar loss z -> sum of masked token terms, for use with ``fd_oracle``.

    Passing ``alpha`` pins the ToDi weights (the freeze-alpha protocol);
    otherwise they are recomputed at every perturbed point.
    """
    logp = np.asarray(logp, dtype=np.float64)
    m = np.ones(logp.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    def loss(z):
        logq = log_softmax(z)
        v = token_terms(spec, logp, logq, alpha)
        v = np.where(m[..., None], v, 0.0)
        return v.sum(axis=(-2, -1))

    return loss


# -- gradcheck suite --------------------------------------------------------

GRADCHECK_SPECS = (
    DivergenceSpec("FKL"),
    DivergenceSpec("RKL"),
    DivergenceSpec("JS"),
    DivergenceSpec("TVD"),
    DivergenceSpec("SKL", lam=0.1),
    DivergenceSpec("SRKL", lam=0.1),
    DivergenceSpec("FixedMix", mix_ratio=0.3),
    DivergenceSpec("Jeffreys"),
    DivergenceSpec("ToDi"),
    DivergenceSpec("GeneralizedToDi", beta=-1.0),
    DivergenceSpec("GeneralizedToDi", beta=0.0),
    DivergenceSpec("GeneralizedToDi", beta=1.0),
    DivergenceSpec("GeneralizedToDi", beta=2.0),
)

# TVD is not differentiable where p_i = q_i; instances closer than this are redrawn.
TVD_KINK_MARGIN = 1e-4


def random_instance(rng: np.random.Generator, T: int, V: int, spec: DivergenceSpec | None = None):
    """Teacher log-probs, student logits and a mask with roughly 20% rows masked."""
    while True:
        logp = log_softmax(rng.normal(0.0, 2.0, size=(T, V)))
        z = rng.normal(0.0, 1.5, size=(T, V))
        mask = rng.random(T) >= 0.2
        if spec is None or spec.kind != "TVD":
            return logp, z, mask
        gap = np.abs(np.exp(logp) - np.exp(log_softmax(z)))
        if gap.min() > TVD_KINK_MARGIN:
            return logp, z, mask


def compare_grads(analytic, numeric, rtol=1e-5, atol=1e-8) -> tuple[float, float, bool]:
    """(max relative error, max absolute error, pass) with pass meaning
    |a - f| <= atol + rtol * |f| everywhere."""
    a = np.asarray(analytic)
    f = np.asarray(numeric)
    diff = np.abs(a - f)
    rel = diff / np.maximum(np.abs(f), atol / rtol)
    ok = bool(np.all(diff <= atol + rtol * np.abs(f)))
    return float(rel.max()), float(diff.max()), ok


def gradcheck(
    specs: Iterable[DivergenceSpec] = GRADCHECK_SPECS,
    n_instances: int = 100,
    T: int = 8,
    V: int = 32,
    seed: int = 0,
    step: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-8,
) -> list[dict]:
    """Analytic logit gradients vs the FD oracle, one report row per spec."""
    reports = []
    for spec in specs:
        rng = np.random.default_rng(seed)
        worst_rel = worst_abs = 0.0
        passed = True
        for _ in range(n_instances):
            logp, z, mask = random_instance(rng, T, V, spec)
            _, g = loss_and_grad(spec, logp, z, mask)
            alpha0 = spec_alpha(spec, logp, log_softmax(z))
            fd = fd_oracle(divergence_loss_fn(spec, logp, mask, alpha0), z, step, batched=True)
            rel, ab, ok = compare_grads(g.d_loss_d_logits, fd, rtol, atol)
            worst_rel = max(worst_rel, rel)
            worst_abs = max(worst_abs, ab)
            passed &= ok
        reports.append(
            {
                "kind": spec.label(),
                "instances": n_instances,
                "max_rel_err": worst_rel,
                "max_abs_err": worst_abs,
                "pass": passed,
            }
        )
    return reports
