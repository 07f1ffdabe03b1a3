"""Frame-level metrics, model evaluation and the ablation harness.

Walking is the positive class. A frame is predicted walking when
p_walking >= 0.5, so ties go to walking.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import EmptyMatrix, LengthMismatch
from .network import ABLATIONS, CLASS_WALKING, predict_track
from .skeleton import CONF_THRESHOLD, LABEL_CODES, STANDING, WALKING

REPORT_VERSION = 1
REFERENCE_TABLE = {
    "without position features": (0.944, 0.873, 0.909, 0.877),
    "without distance features": (0.946, 0.87, 0.907, 0.871),
    "without angle features": (0.942, 0.851, 0.892, 0.846),
    "without dynamic features": (0.905, 0.868, 0.905, 0.874),
    "with all features": (0.951, 0.887, 0.92, 0.89),
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    support_walking: int
    support_standing: int
    undefined: tuple = ()

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "support_walking": self.support_walking,
            "support_standing": self.support_standing,
            "undefined": list(self.undefined),
        }


def _as_codes(labels):
    out = []
    for lab in labels:
        if isinstance(lab, str):
            lab = LABEL_CODES.get(lab.lower(), -1)
        lab = int(lab)
        if lab not in (WALKING, STANDING):
            raise ValueError(f"label {lab!r} is neither walking nor standing")
        out.append(lab)
    return np.array(out, dtype=np.int64)


def predicted_walking(predictions):
    """Bool array from p_walking values (N,) or probability rows (N, 2)."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, CLASS_WALKING]
    return p >= 0.5


def confusion(predictions, labels) -> ConfusionMatrix:
    """Frame counts; ``labels`` are walking/standing codes or names."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    pred = predicted_walking(predictions) if len(predictions) else np.zeros(0, dtype=bool)
    truth = _as_codes(labels) == WALKING
    return ConfusionMatrix(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
        tn=int(np.sum(~pred & ~truth)),
    )


def _ratio(num, den):
    return (float(Fraction(num, den)), False) if den else (0.0, True)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total <= 0:
        raise EmptyMatrix("confusion matrix has no frames")
    undefined = []
    precision, u = _ratio(cm.tp, cm.tp + cm.fp)
    if u:
        undefined.append("precision")
    recall, u = _ratio(cm.tp, cm.tp + cm.fn)
    if u:
        undefined.append("recall")
    if cm.tp:
        # 2PR/(P+R) == 2tp/(2tp+fp+fn), kept exact
        f1 = float(Fraction(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn))
    else:
        f1 = 0.0
        if precision + recall == 0:
            undefined.append("f1")
    accuracy = float(Fraction(cm.tp + cm.tn, cm.total))
    return MetricsReport(precision, recall, f1, accuracy, cm.tp + cm.fn, cm.fp + cm.tn, tuple(undefined))


def predict_dataset(params, tracks, conf_threshold=CONF_THRESHOLD, backend=None):
    """[(track, p_walking per frame)] using the batch forward path."""
    return [(t, predict_track(t, params, conf_threshold, backend)[0]) for t in tracks]


def confusion_from_predictions(pairs, frame_mask=None) -> ConfusionMatrix:
    """Aggregate over (track, p_walking) pairs, skipping unknown labels.

    ``frame_mask(track)`` may return a bool array restricting the frames.
    """
    cm = ConfusionMatrix()
    for track, p in pairs:
        if track.labels is None:
            continue
        sel = (track.labels == WALKING) | (track.labels == STANDING)
        if frame_mask is not None:
            sel &= frame_mask(track)
        if sel.any():
            cm = cm + confusion(p[sel], track.labels[sel])
    return cm


def evaluate(params, tracks, conf_threshold=CONF_THRESHOLD, backend=None) -> MetricsReport:
    """Infer-mode forward over whole tracks; frame-level metrics."""
    return metrics(confusion_from_predictions(predict_dataset(params, tracks, conf_threshold, backend)))


def ablate(tracks, config, test_tracks=None, test_fraction=0.2, on_row=None):
    """Retrain once per feature-group removal and evaluate each model.

    Rows follow the ablation table order: without position, distance, angle,
    dynamic, then all features. Without ``test_tracks`` a by-track split with
    ``config.seed`` holds out ``test_fraction``. Returns [(name, report)].
    """
    from .data_io import split_dataset
    from .training import train

    tracks = list(tracks)
    if test_tracks is None:
        tracks, test_tracks = split_dataset(tracks, test_fraction, config.seed)
    rows = []
    for name, groups in ABLATIONS.items():
        cfg = replace(config, groups=tuple(groups))
        _, best, _ = train(tracks, cfg)
        rep = evaluate(best, test_tracks, cfg.conf_threshold)
        rows.append((name, rep))
        if on_row is not None:
            on_row(name, rep)
    return rows


def format_table(rows, reference=None):
    """Human-readable table of (name, MetricsReport) rows."""
    head = f"{'':28s} {'Precision':>9s} {'Accuracy':>9s} {'F1 score':>9s} {'Recall':>9s}"
    lines = [head]
    for name, r in rows:
        line = f"{name:28s} {r.precision:9.3f} {r.accuracy:9.3f} {r.f1:9.3f} {r.recall:9.3f}"
        if reference and name in reference:
            ref = reference[name]
            line += f"   (ref {ref[0]:.3f} {ref[1]:.3f} {ref[2]:.3f} {ref[3]:.3f})"
        lines.append(line)
    return "\n".join(lines)


def report_record(report: MetricsReport, **extra):
    """One-line machine-readable JSON record."""
    rec = {"kind": "metrics", "version": REPORT_VERSION, **extra, **report.to_dict()}
    return json.dumps(rec, sort_keys=True)
