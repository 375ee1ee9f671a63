"""Per-AU F1 / classification rate and their unweighted (macro) averages."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import check_au
from .errors import EmptyEvaluationError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(preds, labels) -> ConfusionCounts:
    p = np.asarray(preds).astype(bool).reshape(-1)
    t = np.asarray(labels).astype(bool).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise ShapeError(f"need equal non-empty prediction/label lists, got {p.size} and {t.size}")
    return ConfusionCounts(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t))
    )


def f1_score(counts: ConfusionCounts) -> float:
    """``2tp / (2tp + fp + fn)``; 1.0 when there is nothing to find and nothing was flagged."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def classification_rate(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise EmptyEvaluationError("classification rate of zero frames")
    return (counts.tp + counts.tn) / counts.total


@dataclass(frozen=True)
class AuResult:
    f1: float
    classification_rate: float
    counts: ConfusionCounts

    @classmethod
    def from_counts(cls, counts: ConfusionCounts) -> "AuResult":
        return cls(f1_score(counts), classification_rate(counts), counts)

    @classmethod
    def from_predictions(cls, preds, labels) -> "AuResult":
        return cls.from_counts(confusion(preds, labels))


@dataclass(frozen=True)
class EvaluationReport:
    model: str
    per_au: dict
    macro_f1: float
    macro_rate: float

    def to_dict(self):
        return {
            "model": self.model,
            "macro_f1": self.macro_f1,
            "macro_rate": self.macro_rate,
            "per_au": {
                str(au): {"f1": r.f1, "classification_rate": r.classification_rate, "counts": r.counts.to_dict()}
                for au, r in sorted(self.per_au.items())
            },
        }

    @classmethod
    def from_dict(cls, data) -> "EvaluationReport":
        per_au = {
            int(au): AuResult(v["f1"], v["classification_rate"], ConfusionCounts(**v["counts"]))
            for au, v in data["per_au"].items()
        }
        return cls(data["model"], per_au, data["macro_f1"], data["macro_rate"])

    def to_text(self) -> str:
        lines = [f"model: {self.model}", f"{'AU':>4} {'F1':>8} {'rate':>8} {'tp':>7} {'fp':>7} {'tn':>7} {'fn':>7}"]
        for au, r in sorted(self.per_au.items()):
            c = r.counts
            lines.append(f"{au:>4} {r.f1:8.4f} {r.classification_rate:8.4f} {c.tp:7d} {c.fp:7d} {c.tn:7d} {c.fn:7d}")
        lines.append(f"{'mean':>4} {self.macro_f1:8.4f} {self.macro_rate:8.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "au", "f1", "classification_rate", "tp", "fp", "tn", "fn"])
        for au, r in sorted(self.per_au.items()):
            c = r.counts
            w.writerow([self.model, au, repr(r.f1), repr(r.classification_rate), c.tp, c.fp, c.tn, c.fn])
        return buf.getvalue()

    def write(self, stem) -> list[Path]:
        """Write ``<stem>.json``, ``<stem>.txt`` and ``<stem>.csv``."""
        stem = Path(stem)
        paths = [stem.with_suffix(".json"), stem.with_suffix(".txt"), stem.with_suffix(".csv")]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths[1].write_text(self.to_text(), encoding="utf-8")
        paths[2].write_text(self.to_csv(), encoding="utf-8")
        return paths


def macro_report(per_au_results: dict, model: str = "") -> EvaluationReport:
    if not per_au_results:
        raise EmptyEvaluationError("no per-AU results to average")
    per_au = {check_au(au): r for au, r in per_au_results.items()}
    f1 = float(np.mean([r.f1 for r in per_au.values()]))
    rate = float(np.mean([r.classification_rate for r in per_au.values()]))
    return EvaluationReport(model, per_au, f1, rate)


def comparison_table(reports) -> str:
    """Side-by-side per-AU F1 for several reports, one column per model."""
    reports = list(reports)
    aus = sorted({au for r in reports for au in r.per_au})
    width = max([8] + [len(r.model) for r in reports])
    lines = ["  AU " + " ".join(f"{r.model:>{width}}" for r in reports)]
    for au in aus:
        cells = [f"{r.per_au[au].f1:>{width}.4f}" if au in r.per_au else " " * (width - 1) + "-" for r in reports]
        lines.append(f"{au:>4} " + " ".join(cells))
    lines.append("  F1 " + " ".join(f"{r.macro_f1:>{width}.4f}" for r in reports))
    lines.append("rate " + " ".join(f"{r.macro_rate:>{width}.4f}" for r in reports))
    return "\n".join(lines) + "\n"
