"""CSV tables, JSON reports and run manifests written by the CLI."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .harness import METRICS, SWEEP_COLUMNS, EpochRecord

TRACE_COLUMNS = ("epoch",) + METRICS
# metric -> True when larger is better
METRIC_DIRECTION = {"train_loss": False, "fkl_to_teacher": False, "rkl_to_teacher": False, "pearson": True}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def csv_text(header, rows) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trace_csv(records: list[EpochRecord]) -> str:
    return csv_text(TRACE_COLUMNS, ([r.epoch] + [float(getattr(r, m)) for m in METRICS] for r in records))


def sweep_csv(rows: list[dict]) -> str:
    return csv_text(SWEEP_COLUMNS, ([row[c] for c in SWEEP_COLUMNS] for row in rows))


def read_sweep_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(SWEEP_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"not a sweep table; missing columns {sorted(missing)}")
    out = []
    for d in reader:
        row = dict(d)
        row["n_seeds"] = int(d["n_seeds"])
        row["n_failed"] = int(d["n_failed"])
        row["failed"] = d["failed"] == "true"
        for c in SWEEP_COLUMNS[5:]:
            row[c] = float(d[c])
        out.append(row)
    return out


def compare_tables(a: list[dict], b: list[dict]) -> list[tuple]:
    """Join two sweep tables on ``config`` and name the better side per metric."""
    bmap = {r["config"]: r for r in b}
    rows = []
    for ra in a:
        rb = bmap.get(ra["config"])
        if rb is None:
            continue
        for m in METRICS:
            x, y = ra[f"{m}_mean"], rb[f"{m}_mean"]
            if math.isnan(x) or math.isnan(y) or x == y:
                winner = "tie"
            elif (x > y) == METRIC_DIRECTION[m]:
                winner = "a"
            else:
                winner = "b"
            rows.append((ra["config"], m, x, y, winner))
    return rows


COMPARE_COLUMNS = ("config", "metric", "a_mean", "b_mean", "winner")


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    artifact_version: str = __version__
    outputs: list[str] = field(default_factory=list)
    resolved_config: str = ""
    output_sha256: dict[str, str] = field(default_factory=dict)

    @classmethod
    def build(cls, command: str, resolved_config: str, seed, outputs) -> "RunManifest":
        outputs = [str(p) for p in outputs]
        return cls(
            command=command,
            config_digest=digest_text(resolved_config),
            seed=seed,
            outputs=outputs,
            resolved_config=resolved_config,
            output_sha256={p: file_sha256(p) for p in outputs},
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def validate(self) -> bool:
        """Digest recomputation and output hashes both match."""
        if digest_text(self.resolved_config) != self.config_digest:
            return False
        return all(Path(p).exists() and file_sha256(p) == h for p, h in self.output_sha256.items())


def manifest_path(output) -> Path:
    p = Path(output)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(command: str, resolved_config: str, seed, outputs) -> Path:
    m = RunManifest.build(command, resolved_config, seed, outputs)
    path = manifest_path(outputs[0])
    write_text(path, m.to_json())
    return path
