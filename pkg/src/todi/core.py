"""Categorical-distribution primitives.

Log-probabilities are the source of truth everywhere; ``probs`` are derived
from them. Every distribution is floored at ``EPS_FLOOR`` so logs stay finite.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax as _log_softmax

from .errors import DegenerateStatisticError, InvalidInputError

EPS_FLOOR = 1e-12
LOG_EPS_FLOOR = math.log(EPS_FLOOR)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def floor_probs(probs: np.ndarray, eps: float = EPS_FLOOR) -> np.ndarray:
    """Renormalize rows onto the floored simplex ``{p : p_i >= eps, sum p = 1}``.

    Rows already above the floor are only renormalized; rows with entries
    below it are mixed with ``eps`` so each entry ends up >= eps exactly.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("probabilities must be finite and non-negative")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise InvalidInputError("probability rows must have positive mass")
    if np.any(np.abs(total - 1.0) > 1e-12):
        p = p / total
    v = p.shape[-1]
    low = np.any(p < eps, axis=-1, keepdims=True)
    return np.where(low, eps + (1.0 - v * eps) * p, p)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, floored at ``ln EPS_FLOOR``."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    logp = _log_softmax(z, axis=-1)
    if np.any(logp < LOG_EPS_FLOOR):
        return np.log(floor_probs(np.exp(logp)))
    return logp


@dataclass(frozen=True)
class VocabDist:
    """A single categorical distribution over a vocabulary of size V."""

    probs: np.ndarray
    log_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))
        object.__setattr__(self, "log_probs", _readonly(self.log_probs))
        if self.probs.ndim != 1 or self.probs.shape != self.log_probs.shape:
            raise InvalidInputError("VocabDist expects matching 1-D probs and log_probs")

    @classmethod
    def from_probs(cls, probs) -> "VocabDist":
        p = floor_probs(np.asarray(probs, dtype=np.float64))
        if p.ndim != 1:
            raise InvalidInputError("expected a 1-D probability vector")
        return cls(p, np.log(p))

    @classmethod
    def from_log_probs(cls, log_probs) -> "VocabDist":
        logp = np.asarray(log_probs, dtype=np.float64)
        return cls(np.exp(logp), logp)

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class ProbRatio:
    """Natural log of the teacher/student probability ratio for one token."""

    log_r: float

    @property
    def r(self) -> float:
        return math.exp(self.log_r)


@dataclass(frozen=True)
class DistSeq:
    """T rows of categorical distributions plus a per-row loss mask."""

    probs: np.ndarray
    log_probs: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))
        object.__setattr__(self, "log_probs", _readonly(self.log_probs))
        if self.probs.ndim != 2 or self.probs.shape != self.log_probs.shape:
            raise InvalidInputError("DistSeq expects matching T x V arrays")
        mask = self.mask
        if mask is None:
            mask = np.ones(self.probs.shape[0], dtype=bool)
        mask = np.array(mask, dtype=bool, copy=True)
        if mask.shape != (self.probs.shape[0],):
            raise InvalidInputError(
                f"mask length {mask.shape} does not match T={self.probs.shape[0]}"
            )
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_probs(cls, probs, mask=None) -> "DistSeq":
        p = floor_probs(np.atleast_2d(np.asarray(probs, dtype=np.float64)))
        return cls(p, np.log(p), mask)

    @classmethod
    def from_logits(cls, logits, mask=None) -> "DistSeq":
        logp = log_softmax(np.atleast_2d(logits))
        return cls(np.exp(logp), logp, mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def row(self, t: int) -> VocabDist:
        return VocabDist(self.probs[t], self.log_probs[t])

    def to_json(self) -> str:
        return json.dumps({"probs": self.probs.tolist(), "mask": self.mask.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DistSeq":
        obj = json.loads(text)
        try:
            probs, mask = obj["probs"], obj.get("mask")
        except (TypeError, KeyError) as exc:
            raise InvalidInputError("expected an object with a 'probs' key") from exc
        return cls.from_probs(probs, mask)

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "i", "value"])
        for t, row in enumerate(self.probs):
            for i, v in enumerate(row):
                w.writerow([t, i, repr(float(v))])
        return buf.getvalue()


def softmax(row) -> VocabDist:
    z = np.asarray(row, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InvalidInputError("softmax expects a 1-D row with at least two entries")
    return VocabDist.from_log_probs(log_softmax(z))


def log_ratio(p: VocabDist, q: VocabDist, i: int) -> ProbRatio:
    if len(p) != len(q):
        raise InvalidInputError("distributions must share a vocabulary")
    if not 0 <= i < len(p):
        raise InvalidInputError(f"index {i} out of range for V={len(p)}")
    return ProbRatio(float(p.log_probs[i] - q.log_probs[i]))


def _as_seq_arrays(x, mask=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, DistSeq):
        return x.probs, x.mask if mask is None else np.asarray(mask, dtype=bool)
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = np.ones(a.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return a, m


def pearson_similarity(p, q, mask=None) -> float:
    """Pearson correlation of (p_ti, q_ti) over every unmasked (t, i) pair."""
    pa, pm = _as_seq_arrays(p, mask)
    qa, qm = _as_seq_arrays(q, mask)
    if pa.shape != qa.shape:
        raise InvalidInputError(f"shape mismatch {pa.shape} vs {qa.shape}")
    keep = pm & qm
    x = pa[keep].ravel()
    y = qa[keep].ravel()
    if x.size < 2:
        raise InvalidInputError("need at least two unmasked values")
    x = x - x.mean()
    y = y - y.mean()
    sxx = float(x @ x)
    syy = float(y @ y)
    # relative check so rounding noise on a constant input still counts as zero variance
    if sxx <= 1e-28 * x.size or syy <= 1e-28 * y.size:
        raise DegenerateStatisticError("zero variance in an argument")
    rho = float(x @ y) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))
