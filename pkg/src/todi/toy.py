"""Toy teacher/student pairs and per-index FKL vs RKL gradient magnitudes."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import VocabDist
from .errors import DegenerateScenarioError, InvalidParameterError

TOY_KINDS = ("bimodal_vs_unimodal", "shifted_gaussians", "random_dirichlet")
REGION_TOL = 1e-12
PROFILE_COLUMNS = ("index", "p", "q", "region", "grad_fkl_abs", "grad_rkl_abs", "dominant")

P_GT_Q, Q_GT_P, EQUAL = "P_GT_Q", "Q_GT_P", "EQUAL"


def region_of(p_i: float, q_i: float) -> str:
    d = p_i - q_i
    if d > REGION_TOL:
        return P_GT_Q
    if d < -REGION_TOL:
        return Q_GT_P
    return EQUAL


@dataclass(frozen=True)
class ToyScenario:
    p: VocabDist
    q: VocabDist
    regions: tuple[str, ...]

    @classmethod
    def from_probs(cls, p, q) -> "ToyScenario":
        pd, qd = VocabDist.from_probs(p), VocabDist.from_probs(q)
        regions = tuple(region_of(a, b) for a, b in zip(pd.probs, qd.probs))
        return cls(pd, qd, regions)

    @property
    def degenerate(self) -> bool:
        return P_GT_Q not in self.regions or Q_GT_P not in self.regions


def _bump(x, center, width):
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def make_toy(kind: str, V: int = 50, seed: int = 0) -> ToyScenario:
    """Build a seeded teacher/student pair with both p > q and q > p regions.

    The Gaussian families place bumps on a [0, 1] grid of V points with small
    seeded jitter in location and width; a 1% uniform floor keeps the tails
    well away from the probability floor.
    """
    if kind not in TOY_KINDS:
        raise InvalidParameterError(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")
    if V < 4:
        raise InvalidParameterError("V must be at least 4 to host both regions")
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, V)
    if kind == "bimodal_vs_unimodal":
        j = rng.uniform(-0.03, 0.03, size=4)
        p = 0.55 * _bump(x, 0.25 + j[0], 0.08 + j[2] / 3) + 0.45 * _bump(x, 0.72 + j[1], 0.07 + j[3] / 3)
        q = _bump(x, 0.5 + j[2], 0.2 + j[3])
    elif kind == "shifted_gaussians":
        j = rng.uniform(-0.05, 0.05, size=3)
        p = _bump(x, 0.4 + j[0], 0.12 + j[2] / 2)
        q = _bump(x, 0.6 + j[1], 0.15 + j[2] / 2)
    else:
        p = rng.dirichlet(np.ones(V))
        q = rng.dirichlet(np.ones(V))
    if kind != "random_dirichlet":
        p = 0.99 * p / p.sum() + 0.01 / V
        q = 0.99 * q / q.sum() + 0.01 / V
    s = ToyScenario.from_probs(p, q)
    if s.degenerate:
        raise DegenerateScenarioError(f"{kind} with V={V}, seed={seed} lacks one of the regions")
    return s


@dataclass(frozen=True)
class ProfileRow:
    index: int
    p: float
    q: float
    region: str
    grad_fkl_abs: float
    grad_rkl_abs: float
    dominant: str


def gradient_profile(s: ToyScenario) -> list[ProfileRow]:
    """|dFKL/dq_i| = r and |dRKL/dq_i| = |1 - ln r| per index, with the larger one named."""
    if s.degenerate:
        raise DegenerateScenarioError("scenario has no p > q or no q > p region")
    log_r = s.p.log_probs - s.q.log_probs
    g_fkl = np.exp(log_r)
    g_rkl = np.abs(1.0 - log_r)
    rows = []
    for i, region in enumerate(s.regions):
        if region == EQUAL:
            dominant = "tie"
        else:
            dominant = "FKL" if g_fkl[i] > g_rkl[i] else "RKL"
        rows.append(
            ProfileRow(
                i, float(s.p.probs[i]), float(s.q.probs[i]), region,
                float(g_fkl[i]), float(g_rkl[i]), dominant,
            )
        )
    return rows


def dominance_violations(rows) -> list[ProfileRow]:
    expected = {P_GT_Q: "FKL", Q_GT_P: "RKL", EQUAL: "tie"}
    return [r for r in rows if r.dominant != expected[r.region]]


def profile_to_csv(rows) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROFILE_COLUMNS)
    for r in rows:
        w.writerow([r.index, repr(r.p), repr(r.q), r.region, repr(r.grad_fkl_abs), repr(r.grad_rkl_abs), r.dominant])
    return buf.getvalue()


def profile_from_csv(text: str) -> list[ProfileRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != PROFILE_COLUMNS:
        raise ValueError(f"unexpected profile header {reader.fieldnames}")
    return [
        ProfileRow(
            int(d["index"]), float(d["p"]), float(d["q"]), d["region"],
            float(d["grad_fkl_abs"]), float(d["grad_rkl_abs"]), d["dominant"],
        )
        for d in reader
    ]
