"""Confusion matrices and evaluation reports.

Rows are the true class and columns the predicted class, in the fixed
display order Normal, NPI, NPC. Normalized fractions print at three
decimals in the CSV; the JSON keeps full precision.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import ManifestEntry
from .densenet import DenseNet
from .errors import ValidationError
from .labels import CLASS_INDEX, CLASS_ORDER
from .trainer import prepare_batch

NUM_CLASSES = len(CLASS_ORDER)


class ConfusionMatrix:
    """3x3 integer tally with row-normalized fractions.

    Every true class must appear at least once: a zero row has no
    defined normalization and is rejected.
    """

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValidationError(f"expected 3x3 counts, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValidationError("confusion counts must be non-negative")
        row_sums = counts.sum(axis=1)
        if (row_sums == 0).any():
            missing = CLASS_ORDER[int(np.argmin(row_sums))].value
            raise ValidationError(f"no evaluated samples with true class {missing}")
        self.counts = counts
        self.row_normalized = counts / row_sums[:, None]

    @property
    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.row_normalized)

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(
            self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix({self.counts.tolist()})"


def confusion_from_pairs(true_idx, pred_idx) -> np.ndarray:
    """Tally (true, predicted) index pairs into 3x3 counts."""
    true_idx = np.asarray(true_idx, dtype=np.int64)
    pred_idx = np.asarray(pred_idx, dtype=np.int64)
    if true_idx.shape != pred_idx.shape:
        raise ValidationError("true/predicted lengths differ")
    for name, arr in (("true", true_idx), ("predicted", pred_idx)):
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
            raise ValidationError(f"{name} class index out of range")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (true_idx, pred_idx), 1)
    return counts


def evaluate(model: DenseNet, entries: Sequence[ManifestEntry],
             loader: Callable[[str], np.ndarray],
             batch_size: int = 64) -> ConfusionMatrix:
    """Run eval-mode inference over entries and tally the confusion matrix.

    Prediction is the argmax logit; ties resolve to the lowest class
    index, so results are stable across runs.
    """
    if not entries:
        raise ValidationError("cannot evaluate an empty split")
    size = model.config.input_size
    true_idx = np.array([CLASS_INDEX[e.class_label] for e in entries],
                        dtype=np.int64)
    pred_idx = np.empty(len(entries), dtype=np.int64)
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        x = prepare_batch([np.asarray(loader(e.patch_id)) for e in chunk], size)
        logits = model.forward(x, train=False)
        pred_idx[start : start + len(chunk)] = np.argmax(logits, axis=1)
    return ConfusionMatrix(confusion_from_pairs(true_idx, pred_idx))


CSV_HEADER = "true_class," + ",".join(f"predicted_{c.value}" for c in CLASS_ORDER)


def confusion_csv_text(matrix: ConfusionMatrix) -> str:
    """Counts block then normalized block, one labeled row per true class."""
    lines = [CSV_HEADER]
    for i, cls in enumerate(CLASS_ORDER):
        row = ",".join(str(int(v)) for v in matrix.counts[i])
        lines.append(f"true_{cls.value},{row}")
    for i, cls in enumerate(CLASS_ORDER):
        row = ",".join(f"{v:.3f}" for v in matrix.row_normalized[i])
        lines.append(f"true_{cls.value},{row}")
    return "\n".join(lines) + "\n"


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if len(lines) != 1 + 2 * NUM_CLASSES or lines[0] != CSV_HEADER:
        raise ValidationError(f"{path} is not a confusion matrix CSV")
    counts = [[int(v) for v in line.split(",")[1:]]
              for line in lines[1 : 1 + NUM_CLASSES]]
    return ConfusionMatrix(counts)


def confusion_svg_text(matrix: ConfusionMatrix) -> str:
    """Heat table: cell shade from the row fraction, count and fraction text."""
    cell, left, top = 110, 120, 60
    width = left + NUM_CLASSES * cell + 20
    height = top + NUM_CLASSES * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j, cls in enumerate(CLASS_ORDER):
        x = left + j * cell + cell // 2
        parts.append(f'<text x="{x}" y="{top - 26}" font-size="13" '
                     f'text-anchor="middle">pred {cls.value}</text>')
    for i, cls in enumerate(CLASS_ORDER):
        y = top + i * cell + cell // 2
        parts.append(f'<text x="{left - 10}" y="{y}" font-size="13" '
                     f'text-anchor="end">true {cls.value}</text>')
        for j in range(NUM_CLASSES):
            frac = matrix.row_normalized[i, j]
            shade = int(round(255 - 155 * frac))
            fill = f"rgb({shade},{shade},255)"
            x0, y0 = left + j * cell, top + i * cell
            parts.append(f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" '
                         f'fill="{fill}" stroke="black"/>')
            cx = x0 + cell // 2
            parts.append(f'<text x="{cx}" y="{y0 + cell // 2 - 6}" font-size="15" '
                         f'text-anchor="middle">{int(matrix.counts[i, j])}</text>')
            parts.append(f'<text x="{cx}" y="{y0 + cell // 2 + 16}" font-size="12" '
                         f'text-anchor="middle">{frac:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report(matrix: ConfusionMatrix, out_dir: str | Path,
           metadata: dict | None = None) -> dict[str, Path]:
    """Write confusion.csv, metrics.json, and confusion.svg under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "confusion.csv",
        "json": out_dir / "metrics.json",
        "svg": out_dir / "confusion.svg",
    }
    paths["csv"].write_text(confusion_csv_text(matrix), encoding="utf-8")
    payload = {
        "class_order": [c.value for c in CLASS_ORDER],
        "counts": matrix.counts.tolist(),
        "row_normalized": matrix.row_normalized.tolist(),
        "per_class_accuracy": {
            cls.value: float(matrix.per_class_accuracy[i])
            for i, cls in enumerate(CLASS_ORDER)
        },
        "overall_accuracy": matrix.overall_accuracy,
    }
    payload.update(metadata or {})
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    paths["svg"].write_text(confusion_svg_text(matrix), encoding="utf-8")
    return paths
