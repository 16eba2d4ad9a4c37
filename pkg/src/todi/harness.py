"""Desk-scale distillation: a fixed tabular teacher, a tabular student, and a trainer.

The language model is a k-th order Markov table of logits (V**k contexts by V
tokens). Teacher conditionals are exact; only the cross-entropy term sees
sampled corpus tokens.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import log_softmax, pearson_similarity
from .divergences import SPEC_CONFIG_KEYS, DivergenceSpec
from .errors import DegenerateStatisticError, InvalidParameterError, TodiError, TrainingAbortedError
from .gradients import loss_and_grad

TEACHER_KINDS = ("mixture_markov", "random_sparse", "peaked")
OPTIMIZERS = ("adam", "sgd")
METRICS = ("train_loss", "fkl_to_teacher", "rkl_to_teacher", "pearson")


@dataclass
class TinyLM:
    context_order: int
    vocab_size: int
    logits_table: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits_table = np.asarray(self.logits_table, dtype=np.float64)
        expected = (self.vocab_size**self.context_order, self.vocab_size)
        if self.logits_table.shape != expected:
            raise InvalidParameterError(f"logits_table must have shape {expected}")
        if not np.all(np.isfinite(self.logits_table)):
            raise InvalidParameterError("logits_table must be finite")
        if not self.temperature > 0:
            raise InvalidParameterError("temperature must be positive")

    @classmethod
    def uniform(cls, vocab_size: int, context_order: int, temperature: float = 1.0) -> "TinyLM":
        return cls(context_order, vocab_size, np.zeros((vocab_size**context_order, vocab_size)), temperature)

    @property
    def n_contexts(self) -> int:
        return self.vocab_size**self.context_order

    @property
    def n_params(self) -> int:
        return self.logits_table.size

    def log_conditionals(self) -> np.ndarray:
        return log_softmax(self.logits_table / self.temperature)

    def conditionals(self) -> np.ndarray:
        return np.exp(self.log_conditionals())

    def copy(self) -> "TinyLM":
        return TinyLM(self.context_order, self.vocab_size, self.logits_table.copy(), self.temperature)


def contexts_of(tokens: np.ndarray, k: int, V: int) -> np.ndarray:
    """Context index for every predicted position t >= k of each row in ``tokens``."""
    tokens = np.asarray(tokens)
    n, L = tokens.shape
    ctx = np.zeros((n, L - k), dtype=np.int64)
    for j in range(k):
        ctx = ctx * V + tokens[:, j : L - k + j]
    return ctx


def make_teacher(kind: str, V: int, k: int, seed: int) -> TinyLM:
    if kind not in TEACHER_KINDS:
        raise InvalidParameterError(f"unknown teacher kind {kind!r}; expected one of {TEACHER_KINDS}")
    if V < 8:
        raise InvalidParameterError("teacher vocabulary must have V >= 8")
    if k not in (0, 1, 2):
        raise InvalidParameterError("context order k must be 0, 1 or 2")
    rng = np.random.default_rng(seed)
    C = V**k
    probs = np.empty((C, V))
    for c in range(C):
        if kind == "mixture_markov":
            a, b = rng.choice(V, size=2, replace=False)
            wa, wb = rng.uniform(0.25, 0.45), rng.uniform(0.2, 0.35)
            row = (1.0 - wa - wb) * rng.dirichlet(np.ones(V))
            row[a] += wa
            row[b] += wb
        elif kind == "random_sparse":
            support = rng.choice(V, size=max(3, V // 4), replace=False)
            row = np.full(V, 1e-3 / V)
            row[support] += (1.0 - 1e-3) * rng.dirichlet(np.full(support.size, 2.0))
        else:
            top = rng.integers(V)
            mass = rng.uniform(0.9, 0.97)
            row = (1.0 - mass) * rng.dirichlet(np.ones(V))
            row[top] += mass
        probs[c] = row / row.sum()
    if kind != "peaked" and not np.any(np.sort(probs, axis=1)[:, -2] >= 0.2):
        raise InvalidParameterError(f"{kind} teacher with V={V}, k={k}, seed={seed} has no multimodal context")
    return TinyLM(k, V, np.log(probs))


def stationary_contexts(model: TinyLM) -> np.ndarray:
    """Stationary distribution over the V**k context states of the chain."""
    k, V = model.context_order, model.vocab_size
    if k == 0:
        return np.ones(1)
    C = model.n_contexts
    cond = model.conditionals()
    P = np.zeros((C, C))
    shift = (np.arange(C) % V ** (k - 1)) * V
    for s in range(C):
        P[s, shift[s] : shift[s] + V] = cond[s]
    A = P.T - np.eye(C)
    A[-1] = 1.0
    b = np.zeros(C)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_unigram(model: TinyLM) -> np.ndarray:
    return stationary_contexts(model) @ model.conditionals()


def sample_corpus(teacher: TinyLM, n_seq: int, seq_len: int, seed: int) -> np.ndarray:
    """Ancestral samples of shape (n_seq, seq_len); the first k tokens come from the stationary law."""
    k, V = teacher.context_order, teacher.vocab_size
    if n_seq < 1 or seq_len < k + 1:
        raise InvalidParameterError("need n_seq >= 1 and seq_len >= k + 1")
    rng = np.random.default_rng(seed)
    out = np.zeros((n_seq, seq_len), dtype=np.int64)
    if k:
        states = rng.choice(teacher.n_contexts, size=n_seq, p=stationary_contexts(teacher))
        for j in range(k - 1, -1, -1):
            out[:, j] = states % V
            states = states // V
    cdf = np.cumsum(teacher.conditionals(), axis=1)
    ctx = np.zeros(n_seq, dtype=np.int64)
    for j in range(k):
        ctx = ctx * V + out[:, j]
    for t in range(k, seq_len):
        u = rng.random(n_seq)
        tok = np.minimum((cdf[ctx] < u[:, None]).sum(axis=1), V - 1)
        out[:, t] = tok
        if k:
            ctx = (ctx % V ** (k - 1)) * V + tok
    return out


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class TeacherSpec:
    """Scenario description: teacher family and corpus size.

    Serialized as ``"<kind> vocab=16 order=1 seed=3 n_seq=128 seq_len=32"``.
    """

    kind: str = "mixture_markov"
    vocab: int = 16
    order: int = 1
    seed: int = 3
    n_seq: int = 128
    seq_len: int = 32

    def __post_init__(self):
        if self.kind not in TEACHER_KINDS:
            raise InvalidParameterError(f"unknown teacher kind {self.kind!r}; expected one of {TEACHER_KINDS}")

    def __str__(self) -> str:
        parts = [self.kind] + [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)[1:]]
        return " ".join(parts)

    @classmethod
    def parse(cls, text: str) -> "TeacherSpec":
        tokens = str(text).split()
        if not tokens:
            raise InvalidParameterError("empty teacher_spec")
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)} - {"kind"}
        for tok in tokens[1:]:
            key, sep, val = tok.partition("=")
            if not sep or key not in names:
                raise InvalidParameterError(f"bad teacher_spec entry {tok!r}; keys: {sorted(names)}")
            try:
                kwargs[key] = int(val)
            except ValueError:
                raise InvalidParameterError(f"teacher_spec {key} must be an integer") from None
        return cls(tokens[0], **kwargs)

    def build(self) -> TinyLM:
        return make_teacher(self.kind, self.vocab, self.order, self.seed)


@dataclass(frozen=True)
class TrainConfig:
    spec: DivergenceSpec
    epochs: int = 200
    lr: float = 1e-2
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    ce_mix: float = 0.5
    teacher_spec: TeacherSpec = field(default_factory=TeacherSpec)

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be >= 1")
        if not self.lr > 0:
            raise InvalidParameterError("lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidParameterError(f"optimizer must be one of {OPTIMIZERS}")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")
        if not 0.0 <= self.ce_mix <= 1.0:
            raise InvalidParameterError("ce_mix must lie in [0, 1]")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_eps > 0):
            raise InvalidParameterError("invalid Adam hyperparameters")

    def to_config(self) -> dict[str, str]:
        out = self.spec.to_config()
        for f in dataclasses.fields(self):
            if f.name == "spec":
                continue
            val = getattr(self, f.name)
            out[f.name] = repr(val) if isinstance(val, float) else str(val)
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_config().items()))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _train_field_keys() -> tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name != "spec")


CONFIG_KEYS = tuple(SPEC_CONFIG_KEYS) + _train_field_keys()


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    entries = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise InvalidParameterError(f"line {n}: expected key=value, got {raw!r}")
        if key not in CONFIG_KEYS:
            raise InvalidParameterError(f"line {n}: unknown key {key!r}; accepted keys: {', '.join(CONFIG_KEYS)}")
        if key in entries:
            raise InvalidParameterError(f"line {n}: duplicate key {key!r}")
        entries[key] = val.strip()
    return entries


def config_from_entries(entries: dict[str, str]) -> TrainConfig:
    spec = DivergenceSpec.from_config({k: v for k, v in entries.items() if k in SPEC_CONFIG_KEYS})
    kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    for key in _train_field_keys():
        if key not in entries:
            continue
        val = entries[key]
        try:
            if key == "teacher_spec":
                kwargs[key] = TeacherSpec.parse(val)
            elif types[key] in (int, "int"):
                kwargs[key] = int(val)
            elif types[key] in (float, "float"):
                kwargs[key] = float(val)
            else:
                kwargs[key] = val
        except ValueError as exc:
            if isinstance(exc, TodiError):
                raise
            raise InvalidParameterError(f"{key}: cannot parse {val!r}") from None
    return TrainConfig(spec, **kwargs)


def load_config(text: str) -> TrainConfig:
    return config_from_entries(parse_config_text(text))


# -- training ---------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    fkl_to_teacher: float
    rkl_to_teacher: float
    pearson: float

    def finite(self) -> bool:
        return all(math.isfinite(getattr(self, m)) for m in METRICS)


@dataclass
class TrainRun:
    """``trace[e]`` describes the student entering epoch e; ``final`` the student after the last epoch."""

    config: TrainConfig
    trace: list[EpochRecord]
    final: EpochRecord
    final_student: TinyLM


def teacher_metrics(teacher_logp: np.ndarray, student_logp: np.ndarray) -> tuple[float, float, float]:
    """Mean per-context FKL and RKL plus Pearson similarity over all (context, token) pairs."""
    p, q = np.exp(teacher_logp), np.exp(student_logp)
    fkl = float(np.mean(np.sum(p * (teacher_logp - student_logp), axis=1)))
    rkl = float(np.mean(np.sum(q * (student_logp - teacher_logp), axis=1)))
    try:
        rho = pearson_similarity(p, q)
    except DegenerateStatisticError:
        # a uniform student carries no linear association with the teacher
        rho = 0.0
    return fkl, rkl, rho


class _Adam:
    def __init__(self, shape, lr, b1, b2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        params -= self.lr * grad


def pair_counts(pair_idx: np.ndarray, C: int, V: int) -> np.ndarray:
    """(C, V) counts of (context, next-token) pairs from flat ``ctx * V + token`` indices."""
    return np.bincount(np.ravel(pair_idx), minlength=C * V).reshape(C, V).astype(np.float64)


def batch_objective(
    table: np.ndarray,
    temperature: float,
    teacher_logp: np.ndarray,
    counts: np.ndarray,
    spec: DivergenceSpec,
    ce_mix: float,
    alpha=None,
) -> tuple[float, float, np.ndarray]:
    """Mixed CE + KD loss over a set of positions and its gradient w.r.t. the logit table.

    ``counts[c, y]`` is how often context c is followed by token y among the
    positions; both terms are means over positions, grouped by context.
    Returns (loss, kd_loss, grad_table).
    """
    n = counts.sum()
    per_ctx = counts.sum(axis=1)
    seen = per_ctx > 0
    z = table / temperature
    kd, g = loss_and_grad(spec, teacher_logp, z, mask=seen, alpha=alpha, weights=per_ctx / n)
    logq = log_softmax(z)
    ce = -float(np.sum(counts * logq)) / n
    g_ce = (per_ctx[:, None] * np.exp(logq) - counts) / n
    grad = (ce_mix * g_ce + (1.0 - ce_mix) * g.d_loss_d_logits) / temperature
    return ce_mix * ce + (1.0 - ce_mix) * kd, kd, grad


def train(student_init: TinyLM, teacher: TinyLM, corpus: np.ndarray, config: TrainConfig) -> TrainRun:
    if (student_init.vocab_size, student_init.context_order) != (teacher.vocab_size, teacher.context_order):
        raise InvalidParameterError("student and teacher must share vocabulary size and context order")
    k, V = teacher.context_order, teacher.vocab_size
    corpus = np.asarray(corpus, dtype=np.int64)
    pair_idx = contexts_of(corpus, k, V) * V + corpus[:, k:]
    C = teacher.n_contexts
    teacher_logp = teacher.log_conditionals()
    student = student_init.copy()
    params = student.logits_table
    temp = student.temperature
    spec, mix = config.spec, config.ce_mix
    if config.optimizer == "adam":
        opt = _Adam(params.shape, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    else:
        opt = _SGD(config.lr)
    # SeedSequence child 1 drives shuffling; child 0 is reserved for corpus sampling in run_config
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    n_seq = corpus.shape[0]
    all_counts = pair_counts(pair_idx, C, V)

    def snapshot(epoch):
        loss, _, _ = batch_objective(params, temp, teacher_logp, all_counts, spec, mix)
        fkl, rkl, rho = teacher_metrics(teacher_logp, log_softmax(params / temp))
        return EpochRecord(epoch, float(loss), fkl, rkl, rho)

    trace: list[EpochRecord] = []
    for epoch in range(config.epochs):
        rec = snapshot(epoch)
        if not rec.finite():
            raise TrainingAbortedError(f"non-finite metrics entering epoch {epoch}", trace)
        trace.append(rec)
        order = rng.permutation(n_seq)
        for start in range(0, n_seq, config.batch_size):
            b = order[start : start + config.batch_size]
            counts = pair_counts(pair_idx[b], C, V)
            loss, _, grad = batch_objective(params, temp, teacher_logp, counts, spec, mix)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingAbortedError(f"non-finite loss in epoch {epoch}", trace)
            opt.step(params, grad)
            if not np.all(np.isfinite(params)):
                raise TrainingAbortedError(f"parameters overflowed in epoch {epoch}", trace)
    final = snapshot(config.epochs)
    if not final.finite():
        raise TrainingAbortedError("non-finite metrics after training", trace)
    return TrainRun(config, trace, final, student)


def run_config(config: TrainConfig) -> TrainRun:
    """Build the scenario from ``config.teacher_spec`` and train a uniform-init student."""
    ts = config.teacher_spec
    teacher = ts.build()
    corpus_seed = np.random.SeedSequence(config.seed).spawn(2)[0]
    corpus = sample_corpus(teacher, ts.n_seq, ts.seq_len, np.random.default_rng(corpus_seed).integers(2**63))
    student = TinyLM.uniform(ts.vocab, ts.order)
    return train(student, teacher, corpus, config)


def trace_rows(run: TrainRun) -> list[EpochRecord]:
    return list(run.trace) + [run.final]


# -- sweeps -----------------------------------------------------------------


def _run_one(config: TrainConfig):
    try:
        return run_config(config).final
    except TrainingAbortedError:
        return None


def sweep(configs, replicate_seeds, names=None, jobs: int = 1) -> list[dict]:
    """Mean and population std of each final metric per config over seeds.

    Rows whose runs aborted are kept and flagged ``failed``.
    """
    configs = list(configs)
    seeds = list(replicate_seeds)
    if not configs or not seeds:
        raise InvalidParameterError("sweep needs at least one config and one seed")
    names = list(names) if names is not None else [c.spec.label() for c in configs]
    tasks = [c.replace(seed=int(s)) for c in configs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    rows = []
    for ci, (name, cfg) in enumerate(zip(names, configs)):
        finals = results[ci * len(seeds) : (ci + 1) * len(seeds)]
        ok = [f for f in finals if f is not None]
        row = {
            "config": name,
            "kind": cfg.spec.label(),
            "n_seeds": len(seeds),
            "n_failed": len(seeds) - len(ok),
            "failed": len(ok) < len(seeds),
        }
        for m in METRICS:
            vals = np.array([getattr(f, m) for f in ok])
            row[f"{m}_mean"] = float(vals.mean()) if ok else math.nan
            row[f"{m}_std"] = float(vals.std()) if ok else math.nan
        rows.append(row)
    return rows


SWEEP_COLUMNS = ("config", "kind", "n_seeds", "n_failed", "failed") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std")
)
