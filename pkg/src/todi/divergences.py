"""Token-level and sequence-total distillation divergences.

Every kernel works on natural-log probabilities of shape (..., V) and returns
the per-token contribution D[t, i]; totals sum those over the vocabulary and
over unmasked positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import DistSeq, VocabDist
from .errors import InvalidInputError, InvalidParameterError, UnsupportedKindError
from .weighting import alpha_from_log_ratio

KINDS = (
    "FKL",
    "RKL",
    "JS",
    "TVD",
    "SKL",
    "SRKL",
    "FixedMix",
    "Jeffreys",
    "ToDi",
    "GeneralizedToDi",
)
DEFAULT_SKEW = 0.1
LN2 = math.log(2.0)

# config key -> DivergenceSpec attribute
SPEC_CONFIG_KEYS = {"kind": "kind", "lambda": "lam", "mix_ratio": "mix_ratio", "beta": "beta"}


@dataclass(frozen=True)
class DivergenceSpec:
    """Which divergence to compute and its parameters.

    ``lam`` is the SKL/SRKL skew, ``mix_ratio`` the FixedMix weight on FKL and
    ``beta`` the GeneralizedToDi sigmoid scale (``inf`` selects the step weight).
    """

    kind: str
    lam: float | None = None
    mix_ratio: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(self.kind, KINDS)
        skewed = self.kind in ("SKL", "SRKL")
        if skewed and self.lam is None:
            object.__setattr__(self, "lam", DEFAULT_SKEW)
        if self.kind == "FixedMix" and self.mix_ratio is None:
            raise InvalidParameterError("FixedMix requires mix_ratio")
        if self.kind == "GeneralizedToDi" and self.beta is None:
            raise InvalidParameterError("GeneralizedToDi requires beta")
        if not skewed and self.lam is not None:
            raise InvalidParameterError(f"lambda is not a parameter of {self.kind}")
        if self.kind != "FixedMix" and self.mix_ratio is not None:
            raise InvalidParameterError(f"mix_ratio is not a parameter of {self.kind}")
        if self.kind != "GeneralizedToDi" and self.beta is not None:
            raise InvalidParameterError(f"beta is not a parameter of {self.kind}")
        if skewed:
            _check_skew(self.lam)
        if self.mix_ratio is not None and not 0.0 <= self.mix_ratio <= 1.0:
            raise InvalidParameterError("mix_ratio must lie in [0, 1]")
        if self.beta is not None and (math.isnan(self.beta) or self.beta == -math.inf):
            raise InvalidParameterError("beta must be a number or +inf")

    @property
    def weighted(self) -> bool:
        """True for kinds whose per-token weight is a detached alpha."""
        return self.kind in ("ToDi", "GeneralizedToDi")

    @property
    def effective_beta(self) -> float | None:
        if self.kind == "ToDi":
            return 1.0
        return self.beta

    def label(self) -> str:
        if self.kind in ("SKL", "SRKL"):
            return f"{self.kind}(lambda={self.lam:g})"
        if self.kind == "FixedMix":
            return f"FixedMix(mix_ratio={self.mix_ratio:g})"
        if self.kind == "GeneralizedToDi":
            return f"GeneralizedToDi(beta={self.beta:g})"
        return self.kind

    def to_config(self) -> dict[str, str]:
        out = {"kind": self.kind}
        for key, attr in SPEC_CONFIG_KEYS.items():
            val = getattr(self, attr)
            if key != "kind" and val is not None:
                out[key] = repr(float(val)) if math.isfinite(val) else "inf"
        return out

    @classmethod
    def from_config(cls, section: Mapping[str, str]) -> "DivergenceSpec":
        """Build from string-valued config entries (``kind``, ``lambda``, ``mix_ratio``, ``beta``)."""
        if "kind" not in section:
            raise InvalidParameterError("config is missing 'kind'")
        kwargs = {}
        for key in ("lambda", "mix_ratio", "beta"):
            if key in section and str(section[key]).strip() != "":
                kwargs[SPEC_CONFIG_KEYS[key]] = _parse_decimal(key, section[key])
        return cls(str(section["kind"]).strip(), **kwargs)


def _parse_decimal(key, text) -> float:
    s = str(text).strip()
    if s.lower() in ("inf", "+inf"):
        return math.inf
    try:
        return float(s)
    except ValueError:
        raise InvalidParameterError(f"{key} must be a decimal literal, got {text!r}") from None


def _check_skew(lam) -> float:
    if lam is None or not 0.0 < lam < 1.0:
        raise InvalidParameterError(f"lambda must lie in (0, 1), got {lam}")
    return lam


# -- elementwise kernels on log-probabilities -------------------------------


def fkl_terms(logp, logq):
    return np.exp(logp) * (logp - logq)


def rkl_terms(logp, logq):
    return np.exp(logq) * (logq - logp)


def js_terms(logp, logq):
    logm = np.logaddexp(logp, logq) - LN2
    return 0.5 * np.exp(logp) * (logp - logm) + 0.5 * np.exp(logq) * (logq - logm)


def tvd_terms(logp, logq):
    return 0.5 * np.abs(np.exp(logp) - np.exp(logq))


def skl_terms(logp, logq, lam):
    logmix = np.logaddexp(math.log(lam) + logp, math.log1p(-lam) + logq)
    return np.exp(logp) * (logp - logmix)


def srkl_terms(logp, logq, lam):
    logmix = np.logaddexp(math.log1p(-lam) + logp, math.log(lam) + logq)
    return np.exp(logq) * (logq - logmix)


def fixed_mix_terms(logp, logq, mix_ratio):
    return mix_ratio * fkl_terms(logp, logq) + (1.0 - mix_ratio) * rkl_terms(logp, logq)


def jeffreys_terms(logp, logq):
    return fkl_terms(logp, logq) + rkl_terms(logp, logq)


def todi_terms(logp, logq, alpha):
    """alpha * FKL + (1 - alpha) * RKL with alpha supplied as data."""
    return alpha * fkl_terms(logp, logq) + (1.0 - alpha) * rkl_terms(logp, logq)


def spec_alpha(spec: DivergenceSpec, logp, logq) -> np.ndarray | None:
    if not spec.weighted:
        return None
    return alpha_from_log_ratio(np.asarray(logp) - np.asarray(logq), spec.effective_beta)


def token_terms(spec: DivergenceSpec, logp, logq, alpha=None) -> np.ndarray:
    """Per-token contributions for any kind.

    For the ToDi kinds ``alpha`` may be passed in (e.g. frozen from an earlier
    point); otherwise it is computed from the current inputs.
    """
    logp = np.asarray(logp, dtype=np.float64)
    logq = np.asarray(logq, dtype=np.float64)
    k = spec.kind
    if k == "FKL":
        return fkl_terms(logp, logq)
    if k == "RKL":
        return rkl_terms(logp, logq)
    if k == "JS":
        return js_terms(logp, logq)
    if k == "TVD":
        return tvd_terms(logp, logq)
    if k == "SKL":
        return skl_terms(logp, logq, spec.lam)
    if k == "SRKL":
        return srkl_terms(logp, logq, spec.lam)
    if k == "FixedMix":
        return fixed_mix_terms(logp, logq, spec.mix_ratio)
    if k == "Jeffreys":
        return jeffreys_terms(logp, logq)
    if alpha is None:
        alpha = spec_alpha(spec, logp, logq)
    return todi_terms(logp, logq, alpha)


# -- per-token API on VocabDist ---------------------------------------------


def _pair(p: VocabDist, q: VocabDist, i: int) -> tuple[float, float]:
    if len(p) != len(q):
        raise InvalidInputError("distributions must share a vocabulary")
    if not 0 <= i < len(p):
        raise InvalidInputError(f"index {i} out of range for V={len(p)}")
    return float(p.log_probs[i]), float(q.log_probs[i])


def token_fkl(p: VocabDist, q: VocabDist, i: int) -> float:
    return float(fkl_terms(*_pair(p, q, i)))


def token_rkl(p: VocabDist, q: VocabDist, i: int) -> float:
    return float(rkl_terms(*_pair(p, q, i)))


def token_js(p: VocabDist, q: VocabDist, i: int) -> float:
    return float(js_terms(*_pair(p, q, i)))


def token_tvd(p: VocabDist, q: VocabDist, i: int) -> float:
    return float(tvd_terms(*_pair(p, q, i)))


def token_skl(p: VocabDist, q: VocabDist, i: int, lam: float = DEFAULT_SKEW) -> float:
    return float(skl_terms(*_pair(p, q, i), _check_skew(lam)))


def token_srkl(p: VocabDist, q: VocabDist, i: int, lam: float = DEFAULT_SKEW) -> float:
    return float(srkl_terms(*_pair(p, q, i), _check_skew(lam)))


def token_fixed_mix(p: VocabDist, q: VocabDist, i: int, mix_ratio: float) -> float:
    if not 0.0 <= mix_ratio <= 1.0:
        raise InvalidParameterError("mix_ratio must lie in [0, 1]")
    return float(fixed_mix_terms(*_pair(p, q, i), mix_ratio))


def token_jeffreys(p: VocabDist, q: VocabDist, i: int) -> float:
    return float(jeffreys_terms(*_pair(p, q, i)))


def token_todi(p: VocabDist, q: VocabDist, i: int, beta: float = 1.0) -> float:
    logp, logq = _pair(p, q, i)
    a = alpha_from_log_ratio(logp - logq, beta)
    return float(todi_terms(logp, logq, a))


# -- sequence totals --------------------------------------------------------


def _seq(x) -> DistSeq:
    return x if isinstance(x, DistSeq) else DistSeq.from_probs(x)


def token_loss_matrix(spec: DivergenceSpec, p_seq, q_seq, mask=None) -> np.ndarray:
    """T x V matrix of per-token contributions; masked rows are exactly zero."""
    p, q = _seq(p_seq), _seq(q_seq)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    keep = (p.mask & q.mask) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != (p.shape[0],):
        raise InvalidInputError(f"mask must have length T={p.shape[0]}")
    values = token_terms(spec, p.log_probs, q.log_probs)
    return np.where(keep[:, None], values, 0.0)


def total_divergence(spec: DivergenceSpec, p_seq, q_seq, mask=None, normalize: bool = False) -> float:
    """Sum of per-token values over the vocabulary and unmasked positions.

    With ``normalize=True`` the sum is divided by the number of unmasked
    positions (the trainer's convention); the default is the raw sum.
    """
    p, q = _seq(p_seq), _seq(q_seq)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    keep = (p.mask & q.mask) if mask is None else np.asarray(mask, dtype=bool)
    total = float(token_loss_matrix(spec, p, q, keep).sum())
    if normalize:
        n = int(keep.sum())
        return total / n if n else 0.0
    return total
