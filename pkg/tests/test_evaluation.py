import json
from dataclasses import replace

import numpy as np
import pytest

from pedmotion.errors import EmptyMatrix, LengthMismatch
from pedmotion.evaluation import (
    REFERENCE_TABLE,
    ConfusionMatrix,
    ablate,
    confusion,
    confusion_from_predictions,
    evaluate,
    format_table,
    metrics,
    report_record,
)
from pedmotion.network import ABLATIONS
from pedmotion.skeleton import STANDING, UNKNOWN, WALKING
from pedmotion.synthgait import generate_dataset
from pedmotion.training import TrainConfig, train


def test_all_correct():
    cm = confusion([0.9, 0.1, 0.8], [WALKING, STANDING, WALKING])
    assert cm.fp == 0 and cm.fn == 0 and cm.tp == 2 and cm.tn == 1


def test_all_walking_on_standing():
    cm = confusion(np.ones(7), ["standing"] * 7)
    assert cm.tp == 0 and cm.fp == 7


def test_tie_goes_to_walking():
    assert confusion([0.5], [WALKING]).tp == 1
    assert confusion(np.array([[0.5, 0.5]]), [STANDING]).fp == 1


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion([0.1, 0.2], [WALKING])


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        confusion([0.1], [UNKNOWN])


def test_metrics_nines():
    r = metrics(ConfusionMatrix(tp=9, fp=1, fn=1, tn=9))
    assert (r.precision, r.recall, r.f1, r.accuracy) == (0.9, 0.9, 0.9, 0.9)
    assert r.undefined == ()


def test_metrics_zero_denominator():
    r = metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=2))
    assert r.precision == 0.0 and "precision" in r.undefined
    assert r.recall == 0.0 and r.f1 == 0.0


def test_metrics_empty():
    with pytest.raises(EmptyMatrix):
        metrics(ConfusionMatrix())


def test_f1_formula_and_exact_accuracy():
    cm = ConfusionMatrix(tp=37, fp=11, fn=5, tn=29)
    r = metrics(cm)
    assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall), rel=1e-15)
    assert r.accuracy == 66 / 82


def test_permutation_invariance(rng):
    p = rng.random(200)
    y = rng.integers(0, 2, 200)
    perm = rng.permutation(200)
    assert confusion(p, y) == confusion(p[perm], y[perm])


def test_confusion_merges():
    a, b = ConfusionMatrix(1, 2, 3, 4), ConfusionMatrix(5, 6, 7, 8)
    assert a + b == b + a == ConfusionMatrix(6, 8, 10, 12)


def test_reference_row():
    assert REFERENCE_TABLE["with all features"] == (0.951, 0.887, 0.92, 0.89)


class _Track:
    def __init__(self, labels):
        self.labels = np.asarray(labels)


def test_oracle_and_constant_stub():
    tracks = [_Track([1, 1, 0, 0]), _Track([1, -1, 0])]
    oracle = [(t, (t.labels == WALKING).astype(float)) for t in tracks]
    r = metrics(confusion_from_predictions(oracle))
    assert (r.precision, r.recall, r.f1, r.accuracy) == (1.0, 1.0, 1.0, 1.0)
    const = [(t, np.ones(len(t.labels))) for t in tracks]
    assert metrics(confusion_from_predictions(const)).accuracy == 0.5


def test_frame_mask_restricts():
    t = _Track([0, 0, 1, 1])
    cm = confusion_from_predictions([(t, np.array([1.0, 0.0, 0.0, 1.0]))], lambda tr: np.array([0, 1, 1, 0], bool))
    assert cm.total == 2 and cm.tn == 1 and cm.fn == 1


def test_table_and_record():
    r = metrics(ConfusionMatrix(9, 1, 1, 9))
    table = format_table([("with all features", r)], REFERENCE_TABLE)
    assert "0.900" in table and "ref 0.951" in table
    rec = json.loads(report_record(r, row="x"))
    assert rec["accuracy"] == 0.9 and rec["row"] == "x" and rec["version"] == 1


@pytest.mark.slow
def test_ablate_rows_and_consistency():
    tracks = generate_dataset(20, 0.5, seed=3)
    test = generate_dataset(5, 0.5, seed=4)
    cfg = TrainConfig(epochs=1, batch_size=8, seed=2)
    rows = ablate(tracks, cfg, test_tracks=test)
    assert [n for n, _ in rows] == list(ABLATIONS)
    _, best, _ = train(tracks, replace(cfg, groups=tuple(ABLATIONS["with all features"])))
    assert rows[-1][1] == evaluate(best, test)
    assert evaluate(best, test) == evaluate(best, test)
