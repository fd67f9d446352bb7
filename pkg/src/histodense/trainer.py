"""Training loop: seeded shuffles, augmentation, Adam, best-model tracking.

All randomness (epoch shuffles and per-image augmentation draws) comes
from one generator seeded by the config, so a run is reproducible
bit-for-bit at a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .dataset import ManifestEntry
from .densenet import DenseNet
from .errors import TrainingError, ValidationError
from .imageio import resize_bilinear
from .labels import CLASS_INDEX
from .nn.adam import Adam
from .nn.ops import softmax_cross_entropy

PatchLoader = Callable[[str], np.ndarray]

BRIGHTNESS_LOW = 0.9
BRIGHTNESS_HIGH = 1.1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.001
    seed: int = 0
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    brightness: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")

    @property
    def augment_enabled(self) -> bool:
        return self.hflip or self.vflip or self.rot90 or self.brightness


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    records: list[EpochRecord]
    best_epoch: int
    best_val_acc: float
    total_steps: int
    best_path: Path
    last_path: Path


def steps_per_epoch(num_examples: int, batch_size: int) -> int:
    """Batches per epoch; the final partial batch counts."""
    return math.ceil(num_examples / batch_size)


def augment(pixels: np.ndarray, rng: np.random.Generator, *,
            hflip: bool = True, vflip: bool = True, rot90: bool = True,
            brightness: bool = True) -> np.ndarray:
    """Random flips, right-angle rotation, and mild brightness on HxWx3 uint8.

    Disabled transforms consume no rng draws. Brightness multiplies by a
    factor in [0.9, 1.1], rounds, and clamps to [0, 255].
    """
    out = pixels
    if hflip and rng.random() < 0.5:
        out = out[:, ::-1]
    if vflip and rng.random() < 0.5:
        out = out[::-1]
    if rot90:
        k = int(rng.integers(0, 4))
        if k:
            out = np.rot90(out, k)
    if brightness:
        factor = rng.uniform(BRIGHTNESS_LOW, BRIGHTNESS_HIGH)
        scaled = np.floor(out.astype(np.float32) * factor + 0.5)
        out = np.clip(scaled, 0, 255).astype(np.uint8)
    return np.ascontiguousarray(out)


def prepare_batch(images: Sequence[np.ndarray], input_size: int) -> np.ndarray:
    """uint8 HWC patches -> float32 NCHW batch in [0, 1] at the model size."""
    prepared = []
    for img in images:
        arr = img.astype(np.float32) / 255.0
        if arr.shape[0] != input_size or arr.shape[1] != input_size:
            arr = resize_bilinear(arr, input_size, input_size)
        prepared.append(arr.transpose(2, 0, 1))
    return np.stack(prepared)


class _Cache:
    """Loads each patch once, validating shape and surfacing the patch id."""

    def __init__(self, loader: PatchLoader):
        self._loader = loader
        self._store: dict[str, np.ndarray] = {}

    def get(self, patch_id: str) -> np.ndarray:
        if patch_id not in self._store:
            try:
                pixels = np.asarray(self._loader(patch_id))
            except Exception as exc:
                raise TrainingError(f"could not read patch {patch_id}: {exc}") from exc
            if pixels.ndim != 3 or pixels.shape[2] != 3:
                raise TrainingError(
                    f"patch {patch_id} has shape {pixels.shape}, expected HxWx3"
                )
            self._store[patch_id] = pixels.astype(np.uint8)
        return self._store[patch_id]


def _eval_metrics(model: DenseNet, entries: Sequence[ManifestEntry],
                  cache: _Cache, batch_size: int) -> tuple[float, float]:
    if not entries:
        return float("nan"), float("nan")
    size = model.config.input_size
    total_loss = 0.0
    correct = 0
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        x = prepare_batch([cache.get(e.patch_id) for e in chunk], size)
        y = np.array([CLASS_INDEX[e.class_label] for e in chunk], dtype=np.int64)
        logits = model.forward(x, train=False)
        loss, _, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(chunk)
        correct += int((np.argmax(logits, axis=1) == y).sum())
    return total_loss / len(entries), correct / len(entries)


def train(model: DenseNet, entries: Sequence[ManifestEntry], loader: PatchLoader,
          config: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Run the full loop and write best.ckpt, last.ckpt, epochs.csv, loss_curve.svg."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "val"]
    if not train_entries:
        raise ValidationError("manifest has no train entries")

    cache = _Cache(loader)
    for entry in train_entries + val_entries:
        cache.get(entry.patch_id)

    rng = np.random.default_rng(config.seed)
    adam = Adam(model.parameters(), lr=config.lr)
    labels = np.array([CLASS_INDEX[e.class_label] for e in train_entries],
                      dtype=np.int64)
    size = model.config.input_size
    n = len(train_entries)

    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    records: list[EpochRecord] = []
    best_acc = -1.0
    best_epoch = -1

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            images = [cache.get(train_entries[i].patch_id) for i in idx]
            if config.augment_enabled:
                images = [
                    augment(img, rng, hflip=config.hflip, vflip=config.vflip,
                            rot90=config.rot90, brightness=config.brightness)
                    for img in images
                ]
            x = prepare_batch(images, size)
            y = labels[idx]
            model.zero_grad()
            logits = model.forward(x, train=True)
            loss, dlogits, _ = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {step}"
                )
            model.backward(dlogits)
            adam.step()
            epoch_loss += loss * len(idx)

        val_loss, val_acc = _eval_metrics(model, val_entries, cache,
                                          config.batch_size)
        records.append(EpochRecord(epoch, epoch_loss / n, val_loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            save_checkpoint(model, best_path,
                            extra={"epoch": epoch, "val_acc": val_acc})

    if best_epoch < 0:
        # no usable val metric (empty val split): keep the final weights
        best_epoch = config.epochs
        best_acc = float("nan")
        save_checkpoint(model, best_path, extra={"epoch": best_epoch})
    save_checkpoint(model, last_path, extra={"epoch": config.epochs})
    write_epoch_csv(records, out_dir / "epochs.csv")
    write_loss_curve_svg(records, out_dir / "loss_curve.svg")
    return TrainResult(records=records, best_epoch=best_epoch,
                       best_val_acc=best_acc, total_steps=adam.t,
                       best_path=best_path, last_path=last_path)


def write_epoch_csv(records: Sequence[EpochRecord], path: str | Path) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for r in records:
        lines.append(f"{r.epoch},{r.train_loss:.6f},{r.val_loss:.6f},{r.val_acc:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_epoch_csv(path: str | Path) -> list[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    records = []
    for line in lines[1:]:
        epoch, train_loss, val_loss, val_acc = line.split(",")
        records.append(EpochRecord(int(epoch), float(train_loss),
                                   float(val_loss), float(val_acc)))
    return records


def write_loss_curve_svg(records: Sequence[EpochRecord], path: str | Path) -> None:
    """Plain SVG of train/val loss per epoch; fixed geometry, no timestamps."""
    width, height, margin = 640, 400, 50
    series = {
        "train": [(r.epoch, r.train_loss) for r in records],
        "val": [(r.epoch, r.val_loss) for r in records
                if not math.isnan(r.val_loss)],
    }
    points = [p for pts in series.values() for p in pts]
    if points:
        x_max = max(p[0] for p in points)
        y_max = max(max(p[1] for p in points), 1e-9)
    else:
        x_max, y_max = 1, 1.0

    def sx(e: float) -> float:
        return margin + (width - 2 * margin) * (e / max(x_max, 1))

    def sy(v: float) -> float:
        return height - margin - (height - 2 * margin) * (v / y_max)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle">epoch (max {x_max})</text>',
        f'<text x="14" y="{height // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height // 2})">loss (max {y_max:.4f})</text>',
    ]
    for name, color in (("train", "#1f77b4"), ("val", "#d62728")):
        pts = series[name]
        if not pts:
            continue
        coords = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
    parts.append(f'<text x="{width - margin}" y="{margin - 10}" font-size="12" '
                 f'text-anchor="end" fill="#1f77b4">train loss</text>')
    parts.append(f'<text x="{width - margin}" y="{margin + 6}" font-size="12" '
                 f'text-anchor="end" fill="#d62728">val loss</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
