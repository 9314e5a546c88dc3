"""Scoring predicted patch commits and summarising candidate-set sizes.

Metrics are computed per vulnerability and then averaged, so a CVE with
one patch weighs as much as a CVE with twenty.  That is also why the
averaged F1 is generally not the harmonic mean of the averaged precision and
recall.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, PreconditionError


@dataclass(frozen=True)
class EvalRecord:
    cve_id: str
    predicted: list | frozenset
    truth: frozenset

    def __post_init__(self):
        if not self.truth:
            raise ValueError(f"{self.cve_id}: truth set is empty")
        object.__setattr__(self, "truth", frozenset(self.truth))
        if not isinstance(self.predicted, (list, tuple)):
            object.__setattr__(self, "predicted", frozenset(self.predicted))

    @property
    def ranked(self) -> bool:
        return isinstance(self.predicted, (list, tuple))


@dataclass(frozen=True)
class CveScore:
    cve_id: str
    precision: float
    recall: float
    f1: float
    hit: bool


@dataclass
class EvalReport:
    per_cve: list[CveScore]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy_count: int
    accuracy_pct: float
    k: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_cve"] = [asdict(s) for s in self.per_cve]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        d = dict(d)
        d["per_cve"] = [CveScore(**s) for s in d["per_cve"]]
        return cls(**d)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def score_one(record: EvalRecord, k: int | None = None) -> CveScore:
    if k is not None:
        predicted = set(list(dict.fromkeys(record.predicted))[:k])
    else:
        predicted = set(record.predicted)
    correct = len(predicted & record.truth)
    precision = correct / len(predicted) if predicted else 0.0
    recall = correct / len(record.truth)
    return CveScore(record.cve_id, precision, recall, f1_score(precision, recall), correct > 0)


def score(records, k: int | None = None) -> EvalReport:
    """Macro-averaged precision, recall and F1, optionally at a Top-K cutoff."""
    records = list(records)
    if not records:
        raise PreconditionError("nothing to score")
    if k is not None:
        if k < 1:
            raise PreconditionError(f"k must be positive, got {k}")
        unranked = [r.cve_id for r in records if not r.ranked]
        if unranked:
            raise ContractError(f"Top-{k} needs ranked predictions; unranked for {', '.join(unranked[:5])}")
    per_cve = [score_one(r, k) for r in records]
    n = len(per_cve)
    hits = sum(s.hit for s in per_cve)
    return EvalReport(
        per_cve,
        math.fsum(s.precision for s in per_cve) / n,
        math.fsum(s.recall for s in per_cve) / n,
        math.fsum(s.f1 for s in per_cve) / n,
        hits,
        100.0 * hits / n,
        k,
    )


@dataclass
class CandidateStats:
    count: int
    mean: float
    median: float
    std: float
    skewness: float
    q1: float
    q3: float
    min: float
    max: float
    skipped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CandidateStats:
        return cls(**d)


def candidate_stats(counts) -> CandidateStats:
    """Population moments and linear-interpolation quartiles of candidate counts."""
    values = np.asarray(list(counts), dtype=np.float64)
    if values.size == 0:
        raise PreconditionError("candidate_stats needs at least one count")
    if (values < 0).any():
        raise PreconditionError("candidate counts must be non-negative")
    mean = float(values.mean())
    dev = values - mean
    m2 = float(np.mean(dev ** 2))
    m3 = float(np.mean(dev ** 3))
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    q1, median, q3 = (float(x) for x in np.percentile(values, [25, 50, 75]))
    return CandidateStats(
        count=int(values.size),
        mean=mean,
        median=median,
        std=math.sqrt(m2),
        skewness=skew,
        q1=q1,
        q3=q3,
        min=float(values.min()),
        max=float(values.max()),
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _accuracy(report: EvalReport) -> str:
    return f"{report.accuracy_count} ({report.accuracy_pct:.1f}%)"


def _label(report: EvalReport) -> str:
    return "all" if report.k is None else f"Top-{report.k}"


def _markdown_eval(report: EvalReport) -> str:
    out = [
        "| Setting | Precision | Recall | F1 | Accuracy |",
        "|---|---|---|---|---|",
        f"| {_label(report)} | {report.macro_precision:.4f} | {report.macro_recall:.4f} | "
        f"{report.macro_f1:.4f} | {_accuracy(report)} |",
        "",
        "| CVE | Precision | Recall | F1 | Hit |",
        "|---|---|---|---|---|",
    ]
    for s in report.per_cve:
        out.append(f"| {s.cve_id} | {s.precision:.4f} | {s.recall:.4f} | {s.f1:.4f} | {'yes' if s.hit else 'no'} |")
    return "\n".join(out) + "\n"


_STAT_FIELDS = ("count", "mean", "median", "std", "skewness", "q1", "q3", "min", "max", "skipped")


def _markdown_stats(stats: CandidateStats) -> str:
    head = "| " + " | ".join(f.capitalize() for f in _STAT_FIELDS) + " |"
    rule = "|" + "---|" * len(_STAT_FIELDS)
    cells = []
    for name in _STAT_FIELDS:
        value = getattr(stats, name)
        cells.append(str(value) if isinstance(value, int) else f"{value:.4f}")
    return "\n".join([head, rule, "| " + " | ".join(cells) + " |"]) + "\n"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def emit_report(report, fmt: str = "markdown") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if isinstance(report, EvalReport):
        if fmt == "markdown":
            return _markdown_eval(report)
        if fmt == "csv":
            rows = [("cve_id", "precision", "recall", "f1", "hit")]
            rows += [(s.cve_id, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", int(s.hit))
                     for s in report.per_cve]
            rows.append(("macro", f"{report.macro_precision:.6f}", f"{report.macro_recall:.6f}",
                         f"{report.macro_f1:.6f}", report.accuracy_count))
            return _csv(rows)
    elif isinstance(report, CandidateStats):
        if fmt == "markdown":
            return _markdown_stats(report)
        if fmt == "csv":
            return _csv([_STAT_FIELDS, [getattr(report, f) for f in _STAT_FIELDS]])
    else:
        raise TypeError(f"cannot render {type(report).__name__}")
    raise ValueError(f"unknown format {fmt!r}; use json, markdown or csv")


def load_predictions(path) -> list[EvalRecord]:
    """Read NDJSON lines ``{cve_id, predicted: [...], truth: [...]}``.

    Lists stay ranked; a line-numbered ``ValueError`` is raised for bad lines.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(EvalRecord(obj["cve_id"], list(obj["predicted"]), frozenset(obj["truth"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction line ({exc})") from exc
    return records
