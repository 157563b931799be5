"""Average precision in per-class, per-pair and per-sample aggregations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class NoPositivesError(ValueError):
    """AP is undefined for a ranking with no positive labels."""


def average_precision(scores, labels) -> float:
    """Non-interpolated AP of a single ranking.

    Items are ranked by descending score; equal scores keep their original
    order, so the result is reproducible bit for bit.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositivesError("no positive labels")
    # lexsort: last key is primary
    order = np.lexsort((np.arange(s.size), -s))
    rel = y[order].astype(np.float64)
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, s.size + 1)
    return float((precision * rel).sum() / n_pos)


def per_class_ap(scores, labels) -> np.ndarray:
    """AP for every column; NaN where a class has no positives."""
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(labels)
    _check_matrix(S, Y)
    out = np.full(S.shape[1], np.nan)
    for k in range(S.shape[1]):
        if Y[:, k].any():
            out[k] = average_precision(S[:, k], Y[:, k])
    return out


def macro_map(scores, labels) -> float:
    aps = per_class_ap(scores, labels)
    missing = np.isnan(aps)
    if missing.all():
        raise NoPositivesError("no class has a positive label")
    if missing.any():
        log.warning("mAP: %d class(es) without positives excluded: %s",
                    int(missing.sum()), np.flatnonzero(missing).tolist())
    return float(aps[~missing].mean())


def micro_ap(scores, labels) -> float:
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(labels)
    _check_matrix(S, Y)
    return average_precision(S.ravel(), Y.ravel())


def sample_ap(scores, labels) -> float:
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(labels)
    _check_matrix(S, Y)
    vals = [average_precision(S[i], Y[i]) for i in range(S.shape[0]) if Y[i].any()]
    if not vals:
        raise NoPositivesError("no sample has a positive label")
    return float(np.mean(vals))


def _check_matrix(S, Y):
    if S.ndim != 2 or S.shape != Y.shape:
        raise ValueError(f"score matrix {S.shape} and label matrix {Y.shape} must be equal B x K")


def prevalence_baseline(train_labels, n_samples: int, seed=0, noise=1e-9) -> np.ndarray:
    """Score every sample with the training prevalence of each class.

    A tiny seeded perturbation makes the ranking well defined, so the
    expected AP of class k is roughly its prevalence in the scored split.
    """
    Y = np.asarray(train_labels, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    prev = Y.mean(axis=0)
    rng = np.random.default_rng(seed)
    return prev[None, :] + noise * rng.standard_normal((int(n_samples), prev.size))


@dataclass
class EvalReport:
    class_names: list[str]
    per_class: np.ndarray
    mAP: float
    microAP: float | None
    sampleAP: float | None
    n_samples: int
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def columns(self):
        cols = [(name, ap) for name, ap in zip(self.class_names, self.per_class)]
        cols.append(("mAP", self.mAP))
        if self.microAP is not None:
            cols.append(("uAP", self.microAP))
        if self.sampleAP is not None:
            cols.append(("sAP", self.sampleAP))
        return cols

    def to_tsv(self) -> str:
        cols = self.columns()
        head = "\t".join(name for name, _ in cols)
        row = "\t".join("nan" if np.isnan(v) else f"{100 * v:.1f}" for _, v in cols)
        return head + "\n" + row + "\n"

    def to_table(self, row_label: str = "") -> str:
        cols = self.columns()
        width = max(6, max(len(n) for n, _ in cols) + 1)
        lab_w = max(len(row_label), 1) + 2
        head = " " * lab_w + "".join(n.rjust(width) for n, _ in cols)
        vals = "".join(("-" if np.isnan(v) else f"{100 * v:.1f}").rjust(width) for _, v in cols)
        return f"{head}\n{row_label.ljust(lab_w)}{vals}\n"


def evaluate(scores, labels, class_names, multilabel=True) -> EvalReport:
    """Full report.  For single-label tasks ``labels`` may be class indices;
    only per-class APs and mAP are reported then."""
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(labels)
    if Y.ndim == 1:
        Y = np.eye(S.shape[1], dtype=np.int64)[Y]
    aps = per_class_ap(S, Y)
    report = EvalReport(
        class_names=list(class_names),
        per_class=aps,
        mAP=macro_map(S, Y),
        microAP=micro_ap(S, Y) if multilabel else None,
        sampleAP=sample_ap(S, Y) if multilabel else None,
        n_samples=S.shape[0],
    )
    return report
