"""Classification metrics, evaluation records and feature-skew diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .neural import MlpArchitecture, forward, loss_ce

def predict(probs: np.ndarray) -> np.ndarray:
    """Arg-max per row; ties go to the lowest class index."""
    return np.argmax(probs, axis=1)


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    if preds.size and (min(preds.min(), labels.min()) < 0 or max(preds.max(), labels.max()) >= n_classes):
        raise ValueError("class index out of range")
    return np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def support(cm: np.ndarray) -> np.ndarray:
    return cm.sum(axis=1)


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean recall over classes that occur in the true labels."""
    rows = support(cm)
    present = rows > 0
    if not present.any():
        return 0.0
    return float(np.mean(np.diag(cm)[present] / rows[present]))


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class, 0 where precision and recall are both zero or undefined."""
    tp = np.diag(cm).astype(np.float64)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: np.ndarray) -> float:
    present = support(cm) > 0
    if not present.any():
        return 0.0
    return float(per_class_f1(cm)[present].mean())


@dataclass(frozen=True)
class MetricsRecord:
    virtual_time: float
    round: int
    avg_updates: float
    vantage: str  # central | distributed
    split: str  # test | validation
    loss: float
    balanced_accuracy: float
    macro_f1: float
    per_class_f1: tuple[float, ...]
    client_id: str = ""
    class_support: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def f1_of(self, class_index: int) -> float:
        return self.per_class_f1[class_index]


def evaluate(params, arch: MlpArchitecture, x, y, *, vantage="central", split="test",
             virtual_time=0.0, round=0, avg_updates=0.0, client_id="") -> MetricsRecord:
    probs = forward(params, arch, x)
    cm = confusion(predict(probs), y, arch.n_classes)
    return MetricsRecord(float(virtual_time), int(round), float(avg_updates), vantage, split,
                         loss_ce(probs, y), balanced_accuracy(cm), macro_f1(cm),
                         tuple(float(v) for v in per_class_f1(cm)), client_id,
                         tuple(int(v) for v in support(cm)))


def mean_record(records: Sequence[MetricsRecord], **overrides) -> MetricsRecord:
    """Unweighted mean of several records (used for the distributed vantage point).

    A class's F1 is averaged over the records whose split contains that
    class; it is 0 if no record does.
    """
    if not records:
        raise ValueError("no records to average")
    first = records[0]
    f1 = np.array([r.per_class_f1 for r in records], dtype=float)
    if all(r.class_support for r in records):
        has = np.array([r.class_support for r in records]) > 0
        n = has.sum(axis=0)
        class_f1 = np.where(n > 0, (f1 * has).sum(axis=0) / np.maximum(n, 1), 0.0)
    else:
        class_f1 = f1.mean(axis=0)
    fields = dict(
        virtual_time=first.virtual_time, round=first.round, avg_updates=first.avg_updates,
        vantage=first.vantage, split=first.split,
        loss=float(np.mean([r.loss for r in records])),
        balanced_accuracy=float(np.mean([r.balanced_accuracy for r in records])),
        macro_f1=float(np.mean([r.macro_f1 for r in records])),
        per_class_f1=tuple(float(v) for v in class_f1),
    )
    fields.update(overrides)
    return MetricsRecord(**fields)


# ---------------------------------------------------------------- trace files

def f1_column(class_name: str) -> str:
    return "f1_" + class_name


def trace_header(class_names: Sequence[str], with_client=False) -> list[str]:
    head = ["virtual_time_s", "round", "avg_updates", "vantage", "split", "loss", "ba", "macro_f1"]
    if with_client:
        head.insert(3, "client_id")
    return head + [f1_column(c) for c in class_names]


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def format_trace(records: Sequence[MetricsRecord], class_names: Sequence[str], with_client=False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(class_names, with_client))
    for r in records:
        row = [_fmt(r.virtual_time), r.round, _fmt(r.avg_updates), r.vantage, r.split,
               _fmt(r.loss), _fmt(r.balanced_accuracy), _fmt(r.macro_f1)]
        if with_client:
            row.insert(3, r.client_id)
        w.writerow(row + [_fmt(v) for v in r.per_class_f1])
    return buf.getvalue()


def read_trace(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        f1_cols = [c for c in reader.fieldnames if c.startswith("f1_")]
        return [MetricsRecord(float(row["virtual_time_s"]), int(row["round"]), float(row["avg_updates"]),
                              row["vantage"], row["split"], float(row["loss"]), float(row["ba"]),
                              float(row["macro_f1"]), tuple(float(row[c]) for c in f1_cols),
                              row.get("client_id", "") or "")
                for row in reader]


# ---------------------------------------------------------------- skew report

@dataclass(frozen=True)
class BoxStats:
    client_id: str
    feature: str
    n: int
    whisker_low: float
    q1: float
    median: float
    q3: float
    whisker_high: float


@dataclass
class SkewReport:
    class_name: str
    entries: list[BoxStats] = field(default_factory=list)

    def medians(self, feature: str) -> dict[str, float]:
        return {e.client_id: e.median for e in self.entries if e.feature == feature}

    def to_tsv(self) -> str:
        lines = ["client_id\tfeature\tn\twhisker_low\tq1\tmedian\tq3\twhisker_high"]
        for e in self.entries:
            lines.append("\t".join([e.client_id, e.feature, str(e.n)] +
                                   [_fmt(v) for v in (e.whisker_low, e.q1, e.median, e.q3, e.whisker_high)]))
        return "\n".join(lines) + "\n"


def box_stats(values: np.ndarray) -> tuple[float, float, float, float, float]:
    """Tukey box: quartiles and whiskers at the most extreme points within 1.5 IQR."""
    q1, q2, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return float(inside.min()), float(q1), float(q2), float(q3), float(inside.max())


def skew_report(clients, class_index: int, feature_indices: Sequence[int],
                feature_names: Sequence[str], class_names: Sequence[str]) -> SkewReport:
    """Per-client box statistics of one class's (scaled) feature values.

    Uses all three splits of each client before augmentation; clients
    without samples of the class are skipped.
    """
    report = SkewReport(class_names[class_index])
    for c in clients:
        x, y = c.all_data()
        sel = x[y == class_index]
        if sel.shape[0] == 0:
            continue
        for j in feature_indices:
            report.entries.append(BoxStats(c.client_id, feature_names[j], int(sel.shape[0]),
                                           *box_stats(sel[:, j])))
    return report
