"""Confusion-matrix arithmetic, reports, and model evaluation."""

import json

import numpy as np
import pytest

from histodense.dataset import ManifestEntry
from histodense.densenet import build_tiny
from histodense.errors import ValidationError
from histodense.evaluator import (
    CSV_HEADER,
    ConfusionMatrix,
    confusion_csv_text,
    confusion_from_pairs,
    confusion_svg_text,
    evaluate,
    read_confusion_csv,
    report,
)
from histodense.labels import CLASS_ORDER
from helpers import class_texture

# Two 500-per-class reference tallies with hand-checked fractions.
COUNTS_A = [[467, 3, 30], [0, 500, 0], [22, 4, 474]]
COUNTS_B = [[9, 416, 75], [0, 496, 4], [2, 163, 335]]

FRACTIONS_A = [
    ["0.934", "0.006", "0.060"],
    ["0.000", "1.000", "0.000"],
    ["0.044", "0.008", "0.948"],
]
FRACTIONS_B = [
    ["0.018", "0.832", "0.150"],
    ["0.000", "0.992", "0.008"],
    ["0.004", "0.326", "0.670"],
]


# ------------------------------------------------------------ construction

def test_rejects_bad_shapes_and_values():
    with pytest.raises(ValidationError, match="3x3"):
        ConfusionMatrix([[1, 2], [3, 4]])
    with pytest.raises(ValidationError, match="non-negative"):
        ConfusionMatrix([[1, 0, 0], [0, -1, 0], [0, 0, 1]])


def test_zero_row_names_missing_class():
    with pytest.raises(ValidationError, match="NPI"):
        ConfusionMatrix([[5, 0, 0], [0, 0, 0], [0, 0, 5]])


def test_equality_by_counts():
    assert ConfusionMatrix(COUNTS_A) == ConfusionMatrix(COUNTS_A)
    assert ConfusionMatrix(COUNTS_A) != ConfusionMatrix(COUNTS_B)


# ------------------------------------------------------ reference fixtures

@pytest.mark.parametrize(
    "counts,fractions,accuracies,overall",
    [
        (COUNTS_A, FRACTIONS_A, (0.934, 1.0, 0.948), 1441 / 1500),
        (COUNTS_B, FRACTIONS_B, (0.018, 0.992, 0.670), 840 / 1500),
    ],
)
def test_reference_tallies(counts, fractions, accuracies, overall):
    matrix = ConfusionMatrix(counts)
    formatted = [[f"{v:.3f}" for v in row] for row in matrix.row_normalized]
    assert formatted == fractions
    np.testing.assert_allclose(matrix.per_class_accuracy, accuracies, atol=5e-4)
    assert matrix.overall_accuracy == pytest.approx(overall)


# ------------------------------------------------------------------ tally

def test_confusion_from_pairs_oracle():
    rng = np.random.default_rng(0)
    true_idx = rng.integers(0, 3, size=500)
    pred_idx = rng.integers(0, 3, size=500)
    counts = confusion_from_pairs(true_idx, pred_idx)
    expected = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(true_idx, pred_idx):
        expected[t, p] += 1
    np.testing.assert_array_equal(counts, expected)
    assert counts.sum() == 500


def test_confusion_from_pairs_validation():
    with pytest.raises(ValidationError, match="lengths"):
        confusion_from_pairs([0, 1], [0])
    with pytest.raises(ValidationError, match="out of range"):
        confusion_from_pairs([0, 3], [0, 0])
    with pytest.raises(ValidationError, match="out of range"):
        confusion_from_pairs([0, 0], [-1, 0])


# -------------------------------------------------------------------- csv

def test_csv_text_format():
    text = confusion_csv_text(ConfusionMatrix(COUNTS_A))
    lines = text.strip().splitlines()
    assert lines[0] == "true_class,predicted_Normal,predicted_NPI,predicted_NPC"
    assert lines[1] == "true_Normal,467,3,30"
    assert lines[2] == "true_NPI,0,500,0"
    assert lines[3] == "true_NPC,22,4,474"
    assert lines[4] == "true_Normal,0.934,0.006,0.060"
    assert lines[5] == "true_NPI,0.000,1.000,0.000"
    assert lines[6] == "true_NPC,0.044,0.008,0.948"


def test_csv_round_trip(tmp_path):
    matrix = ConfusionMatrix(COUNTS_B)
    path = tmp_path / "confusion.csv"
    path.write_text(confusion_csv_text(matrix), encoding="utf-8")
    assert read_confusion_csv(path) == matrix


def test_csv_reader_rejects_other_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="not a confusion matrix"):
        read_confusion_csv(path)


# ------------------------------------------------------------------ report

def test_report_writes_files(tmp_path):
    matrix = ConfusionMatrix(COUNTS_A)
    paths = report(matrix, tmp_path / "eval", metadata={"split": "test1", "seed": 0})
    for p in paths.values():
        assert p.is_file()
    payload = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert payload["class_order"] == ["Normal", "NPI", "NPC"]
    assert payload["counts"] == COUNTS_A
    assert payload["split"] == "test1"
    assert payload["per_class_accuracy"]["NPC"] == pytest.approx(0.948)
    assert payload["overall_accuracy"] == pytest.approx(1441 / 1500)
    svg = paths["svg"].read_text(encoding="utf-8")
    assert "467" in svg and "0.934" in svg
    assert read_confusion_csv(paths["csv"]) == matrix


def test_report_deterministic(tmp_path):
    matrix = ConfusionMatrix(COUNTS_B)
    a = report(matrix, tmp_path / "a", metadata={"seed": 1})
    b = report(matrix, tmp_path / "b", metadata={"seed": 1})
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_svg_shades_by_fraction():
    svg = confusion_svg_text(ConfusionMatrix([[10, 0, 0], [0, 10, 0], [0, 0, 10]]))
    assert 'fill="rgb(100,100,255)"' in svg  # fraction 1.0
    assert 'fill="rgb(255,255,255)"' in svg  # fraction 0.0


# --------------------------------------------------------------- evaluate

def make_entries(per_class, split="test1"):
    rng = np.random.default_rng(1)
    store, entries = {}, []
    for ci, label in enumerate(CLASS_ORDER):
        for i in range(per_class):
            pid = f"{label.value}_{i}"
            store[pid] = class_texture(ci, rng, side=32)
            entries.append(ManifestEntry(pid, label, split))
    return entries, store.__getitem__


def test_evaluate_tallies_every_entry():
    entries, loader = make_entries(per_class=5)
    model = build_tiny(input_size=32, seed=0)
    # initialize running stats before eval-mode inference
    from histodense.trainer import prepare_batch
    model.forward(prepare_batch([loader(e.patch_id) for e in entries], 32),
                  train=True)
    matrix = evaluate(model, entries, loader, batch_size=4)
    assert matrix.counts.sum() == 15
    np.testing.assert_array_equal(matrix.counts.sum(axis=1), [5, 5, 5])


def test_evaluate_batch_size_invariant():
    entries, loader = make_entries(per_class=4)
    model = build_tiny(input_size=32, seed=3)
    from histodense.trainer import prepare_batch
    model.forward(prepare_batch([loader(e.patch_id) for e in entries], 32),
                  train=True)
    a = evaluate(model, entries, loader, batch_size=3)
    b = evaluate(model, entries, loader, batch_size=12)
    assert a == b


def test_evaluate_empty_split_raises():
    model = build_tiny(input_size=32)
    with pytest.raises(ValidationError, match="empty split"):
        evaluate(model, [], lambda pid: None)


def test_evaluate_tie_breaks_to_lowest_index():
    class Stub:
        class config:
            input_size = 32

        def forward(self, x, train=True):
            return np.zeros((x.shape[0], 3), dtype=np.float32)  # all ties

    entries, loader = make_entries(per_class=2)
    matrix = evaluate(Stub(), entries, loader, batch_size=4)
    np.testing.assert_array_equal(matrix.counts.sum(axis=0), [6, 0, 0])
