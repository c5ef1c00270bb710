"""Per-row comparison of predicted stand counts with manual counts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DegenerateGroundTruth, InsufficientOverlap, ParseError

Key = Tuple[int, int]


@dataclass(frozen=True)
class GroundTruthRow:
    range_idx: int
    row_idx: int
    manual_count: int

    def __post_init__(self):
        if self.manual_count < 0:
            raise ValueError("manual count must be >= 0")


def r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """``1 - SS_res / SS_tot`` around the mean of ``actual``; negative when
    the predictions are worse than that mean.  Not the squared correlation."""
    y = np.asarray(actual, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("actual and predicted must be 1-D and equally long")
    if len(y) < 2:
        raise ValueError("need at least two rows")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateGroundTruth("all ground-truth counts are equal")
    ss_res = float(np.sum((y - yhat) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class EvalResult:
    r2: float
    n: int
    keys: List[Key]
    actual: List[int]
    predicted: List[int]
    mean_actual: float
    only_predicted: List[Key] = field(default_factory=list)
    only_truth: List[Key] = field(default_factory=list)

    @property
    def residuals(self) -> List[int]:
        return [p - a for p, a in zip(self.predicted, self.actual)]

    def to_csv(self) -> str:
        lines = ["range,row,predicted,actual,residual"]
        for (r, c), p, a in zip(self.keys, self.predicted, self.actual):
            lines.append(f"{r},{c},{p},{a},{p - a}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        fmt = lambda keys: " ".join(f"{r}:{c}" for r, c in keys) or "-"
        return (
            f"r2={self.r2:.6f}\n"
            f"n={self.n}\n"
            f"mean_actual={self.mean_actual:.6f}\n"
            f"unmatched_predicted={fmt(self.only_predicted)}\n"
            f"unmatched_truth={fmt(self.only_truth)}\n"
        )


def join_and_eval(predicted: Dict[Key, int], truth: Sequence[GroundTruthRow]) -> EvalResult:
    """Inner join on (range, row); keys present on one side only are listed,
    not dropped silently.  ``predicted`` is a ``{(range, row): count}`` map
    (``CountReport.as_dict()``)."""
    if hasattr(predicted, "as_dict"):
        predicted = predicted.as_dict()
    tmap = {}
    for t in truth:
        key = (t.range_idx, t.row_idx)
        if key in tmap:
            raise ValueError(f"duplicate ground-truth row {key}")
        tmap[key] = t.manual_count
    keys = sorted(set(predicted) & set(tmap))
    if len(keys) < 2:
        raise InsufficientOverlap(f"only {len(keys)} rows match between predictions and ground truth")
    actual = [tmap[k] for k in keys]
    pred = [predicted[k] for k in keys]
    return EvalResult(
        r2=r_squared(actual, pred),
        n=len(keys),
        keys=keys,
        actual=actual,
        predicted=pred,
        mean_actual=float(np.mean(actual)),
        only_predicted=sorted(set(predicted) - set(tmap)),
        only_truth=sorted(set(tmap) - set(predicted)),
    )


def parse_counts_csv(text: str) -> Dict[Key, int]:
    """Read a ``range,row,count`` table (counts.csv and truth.csv share it)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:3]] != ["range", "row", "count"]:
        raise ParseError("expected header 'range,row,count'")
    out = {}
    for n, rec in enumerate(reader, start=2):
        try:
            key = (int(rec["range"]), int(rec["row"]))
            out[key] = int(rec["count"])
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), n) from None
    return out


def read_counts_csv(path) -> Dict[Key, int]:
    return parse_counts_csv(Path(path).read_text())


def read_ground_truth(path) -> List[GroundTruthRow]:
    return [GroundTruthRow(r, c, n) for (r, c), n in read_counts_csv(path).items()]


def write_eval(directory, result: EvalResult):
    d = Path(directory)
    (d / "eval.csv").write_text(result.to_csv())
    (d / "eval_summary.txt").write_text(result.summary())
