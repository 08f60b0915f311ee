"""The ordered record of oracle calls made by a run, and its CSV form."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PHASES = ("init", "bo", "baseline")


@dataclass
class Evaluation:
    call_index: int
    sequence: str
    phase: str
    scores: np.ndarray
    wall_time: float = 0.0


@dataclass
class IterationDiagnostics:
    iteration: int
    n_train: int
    lml: list[float]
    signal_variance: list[float]
    noise_variance: list[float]
    acquisition_value: float
    fit_seconds: float
    ga_seconds: float
    hypervolume: float


@dataclass
class RunLog:
    k: int
    seed: int | None = None
    config: dict | None = None
    evaluations: list[Evaluation] = field(default_factory=list)
    diagnostics: list[IterationDiagnostics] = field(default_factory=list)
    status: str = "running"
    elapsed: list[float] = field(default_factory=list)  # run wall time at each call
    oracle_seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.evaluations)

    @property
    def sequences(self) -> list[str]:
        return [e.sequence for e in self.evaluations]

    @property
    def scores(self) -> np.ndarray:
        if not self.evaluations:
            return np.empty((0, self.k))
        return np.stack([e.scores for e in self.evaluations])

    @property
    def phases(self) -> list[str]:
        return [e.phase for e in self.evaluations]

    def runlog_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["call_index", "sequence", "phase"] + [f"score_{j + 1}" for j in range(self.k)])
        for e in self.evaluations:
            w.writerow([e.call_index, e.sequence, e.phase] + [repr(float(v)) for v in e.scores])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        k = sum(1 for h in header if h.startswith("score_"))
        log = cls(k=k, status="loaded")
        for r in body:
            log.evaluations.append(Evaluation(int(r[0]), r[1], r[2], np.array([float(v) for v in r[3 : 3 + k]])))
        return log


def write_atomic(path: str | Path, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()
