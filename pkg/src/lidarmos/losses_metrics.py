"""Training losses (weighted cross-entropy, Lovasz-softmax) and moving-object
evaluation metrics, including the close/medium/far distance breakdown."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError

LOG_EPS = 1e-12
DEFAULT_BINS: tuple[tuple[float, float], ...] = ((0.0, 20.0), (20.0, 50.0), (50.0, math.inf))
BIN_NAMES = ("Close", "Medium", "Far")


def _check(probs, gt):
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt).astype(np.int64).ravel()
    if probs.ndim != 2 or len(probs) != len(gt):
        raise ShapeError(f"probabilities {probs.shape} do not match {len(gt)} labels")
    if len(gt) and (gt.min() < 0 or gt.max() >= probs.shape[1]):
        raise ShapeError("label outside the class range")
    return probs, gt


def weighted_cross_entropy(probs, gt, class_weights=None) -> float:
    """Mean over points of ``-w[gt] * log(p[gt])`` with the log clamped at 1e-12."""
    probs, gt = _check(probs, gt)
    if len(gt) == 0:
        return 0.0
    w = np.ones(probs.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (probs.shape[1],) or np.any(w <= 0):
        raise ShapeError("class weights must be positive, one per class")
    p_true = probs[np.arange(len(gt)), gt]
    return float(np.mean(-w[gt] * np.log(np.maximum(p_true, LOG_EPS))))


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss as errors are added in sorted order."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs, gt) -> float:
    """Lovasz-softmax averaged over the classes present in ``gt``."""
    probs, gt = _check(probs, gt)
    losses = []
    for c in range(probs.shape[1]):
        fg = (gt == c).astype(np.float64)
        if not fg.any():
            continue
        errors = np.abs(fg - probs[:, c])
        order = np.argsort(-errors, kind="stable")
        losses.append(float(np.dot(errors[order], lovasz_grad(fg[order]))))
    return float(np.mean(losses)) if losses else 0.0


def branch_loss(probs, gt, class_weights=None) -> float:
    return weighted_cross_entropy(probs, gt, class_weights) + lovasz_softmax(probs, gt)


def total_loss(sem_probs, sem_gt, motion_probs, motion_gt, class_weights=None,
               motion_class_weights=None) -> float:
    """Semantic branch loss plus motion branch loss; the BEV branch has none."""
    return (branch_loss(sem_probs, sem_gt, class_weights)
            + branch_loss(motion_probs, motion_gt, motion_class_weights))


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @staticmethod
    def _pct(num, den):
        return None if den == 0 else 100.0 * num / den

    @property
    def iou(self) -> float | None:
        return self._pct(self.tp, self.tp + self.fp + self.fn)

    @property
    def recall(self) -> float | None:
        return self._pct(self.tp, self.tp + self.fn)

    @property
    def precision(self) -> float | None:
        return self._pct(self.tp, self.tp + self.fp)


def confusion(pred, gt, positive_class=1) -> Confusion:
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction length {len(pred)} != ground truth length {len(gt)}")
    p = pred == positive_class
    g = gt == positive_class
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return Confusion(tp, fp, fn, len(p) - tp - fp - fn)


def iou_eval(pred, gt, positive_class=1):
    """``(iou, recall, precision)`` in percent; ``None`` for an undefined ratio."""
    c = confusion(pred, gt, positive_class)
    return c.iou, c.recall, c.precision


@dataclass
class EvalReport:
    bins: list[tuple[float, float]]
    per_bin: list[Confusion]
    overall: Confusion = field(default_factory=Confusion)
    names: list[str] | None = None

    def __post_init__(self):
        if self.names is None:
            self.names = list(BIN_NAMES) if list(map(tuple, self.bins)) == list(DEFAULT_BINS) else [
                _bin_label(b) for b in self.bins]

    def __add__(self, other: "EvalReport") -> "EvalReport":
        if self.bins != other.bins:
            raise ShapeError("cannot merge reports with different bins")
        return EvalReport(self.bins, [a + b for a, b in zip(self.per_bin, other.per_bin)],
                          self.overall + other.overall, self.names)

    def rows(self):
        for name, b, c in zip(self.names, self.bins, self.per_bin):
            yield name, b, c
        yield "All", (0.0, math.inf), self.overall

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["bin", "lo_m", "hi_m", "tp", "fp", "fn", "tn", "iou", "recall", "precision"])
        for name, (lo, hi), c in self.rows():
            wr.writerow([name, lo, hi, c.tp, c.fp, c.fn, c.tn,
                         *("" if v is None else f"{v:.4f}" for v in (c.iou, c.recall, c.precision))])
        return buf.getvalue()

    def to_table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.1f}"

        head = " | ".join(f"{n} ({_bin_label(b)})" for n, b, _ in self.rows())
        sub = " | ".join("IoU   R     P" for _ in self.rows())
        vals = " | ".join(f"{fmt(c.iou):5} {fmt(c.recall):5} {fmt(c.precision):5}" for *_, c in self.rows())
        return "\n".join([head, sub, vals])

    def to_dict(self) -> dict:
        return {name: {"lo": lo, "hi": None if math.isinf(hi) else hi, "tp": c.tp, "fp": c.fp,
                       "fn": c.fn, "tn": c.tn, "iou": c.iou, "recall": c.recall,
                       "precision": c.precision}
                for name, (lo, hi), c in self.rows()}


def _bin_label(b) -> str:
    lo, hi = b
    if math.isinf(hi):
        return f">={lo:g}m"
    if lo == 0:
        return f"<{hi:g}m"
    return f"{lo:g}-{hi:g}m"


def point_distances(cloud) -> np.ndarray:
    xyz = getattr(cloud, "xyz", None)
    if xyz is None:
        xyz = np.asarray(cloud, dtype=np.float64)[:, :3]
    return np.sqrt(np.einsum("ij,ij->i", xyz, xyz))


def distance_binned_eval(pred, gt, cloud, bins: Sequence[tuple[float, float]] = DEFAULT_BINS,
                         positive_class=1) -> EvalReport:
    """Confusion counts per ``[lo, hi)`` range bin of the point's sensor distance."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    r = point_distances(cloud)
    if not (len(pred) == len(gt) == len(r)):
        raise ShapeError("prediction, ground truth and cloud lengths differ")
    per_bin = []
    for lo, hi in bins:
        m = (r >= lo) & (r < hi)
        per_bin.append(confusion(pred[m], gt[m], positive_class))
    return EvalReport([tuple(b) for b in bins], per_bin, confusion(pred, gt, positive_class))
