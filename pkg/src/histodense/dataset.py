"""Deterministic dataset manifests.

Training pools are sampled per class with a seeded partial Fisher-Yates
shuffle after a canonical sort by patch id, so the manifest is a pure
function of (pool content, parameters, seed) and independent of pool
file ordering. The trailing fraction of each class selection becomes the
validation split. Test splits are sampled the same way from pools with
explicit exclusions and fail loudly on any shortfall.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from histodense.errors import ParseError, ShortfallError, ValidationError
from histodense.labels import CLASS_ORDER, ClassLabel, parse_class

SPLITS = ("train", "val", "test1", "test2")


@dataclass(frozen=True)
class ManifestEntry:
    patch_id: str
    class_label: ClassLabel
    split: str


@dataclass
class DatasetManifest:
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for e in self.entries:
            key = (e.class_label.value, e.split)
            out[key] = out.get(key, 0) + 1
        return out

    def ids(self, split: str) -> list[str]:
        return [e.patch_id for e in self.entries if e.split == split]

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.patch_id in seen:
                raise ValidationError(f"patch id {e.patch_id} appears twice")
            seen.add(e.patch_id)


def pool_digest(ids: Iterable[str]) -> str:
    """SHA-256 of the sorted patch-id list, for provenance."""
    blob = "\n".join(sorted(ids)).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def group_pool(records: Iterable[tuple[str, ClassLabel]]) -> dict[ClassLabel, list[str]]:
    pool: dict[ClassLabel, list[str]] = {}
    for patch_id, label in records:
        pool.setdefault(label, []).append(patch_id)
    return pool


def _sample_without_replacement(ids: Sequence[str], count: int, rng: np.random.Generator) -> list[str]:
    """Seeded partial Fisher-Yates over a canonically sorted id list."""
    pool = sorted(ids)
    n = len(pool)
    for i in range(count):
        j = int(rng.integers(i, n))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:count]


def sample_training(
    pool: Mapping[ClassLabel, Sequence[str]],
    per_class: int,
    val_fraction: float,
    seed: int,
) -> DatasetManifest:
    """Select per_class patches per class and split off the validation tail.

    Exactly ``round(val_fraction * per_class)`` of each class selection
    (the last entries of the shuffled order) go to val, the rest to train.
    """
    if per_class < 1:
        raise ValidationError(f"per_class must be >= 1, got {per_class}")
    if not 0 < val_fraction < 1:
        raise ValidationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    val_count = round(val_fraction * per_class)

    rng = np.random.default_rng(seed)
    manifest = DatasetManifest(seed=seed)
    for label in CLASS_ORDER:
        ids = pool.get(label, ())
        if len(ids) < per_class:
            raise ShortfallError(
                f"class {label.value}: pool has {len(ids)} patches, "
                f"need {per_class} (short by {per_class - len(ids)})"
            )
        chosen = _sample_without_replacement(ids, per_class, rng)
        for pid in chosen[: per_class - val_count]:
            manifest.entries.append(ManifestEntry(pid, label, "train"))
        for pid in chosen[per_class - val_count :]:
            manifest.entries.append(ManifestEntry(pid, label, "val"))
    manifest.metadata = {
        "per_class": per_class,
        "val_fraction": val_fraction,
        "pool_digest": pool_digest(pid for ids in pool.values() for pid in ids),
    }
    manifest.validate()
    return manifest


def sample_test(
    pool: Mapping[ClassLabel, Sequence[str]],
    per_class: int,
    exclusions: set[str],
    seed: int,
    split: str = "test1",
) -> list[ManifestEntry]:
    """Sample per_class test patches per class, disjoint from exclusions."""
    if per_class < 1:
        raise ValidationError(f"per_class must be >= 1, got {per_class}")
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}")
    rng = np.random.default_rng(seed)
    entries: list[ManifestEntry] = []
    for label in CLASS_ORDER:
        ids = [pid for pid in pool.get(label, ()) if pid not in exclusions]
        if len(ids) < per_class:
            raise ShortfallError(
                f"class {label.value}: pool has {len(ids)} patches after "
                f"exclusions, need {per_class} (short by {per_class - len(ids)})"
            )
        for pid in _sample_without_replacement(ids, per_class, rng):
            entries.append(ManifestEntry(pid, label, split))
    return entries


def write_manifest(manifest: DatasetManifest, csv_path) -> None:
    """Write the manifest CSV plus its JSON metadata sidecar."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("patch_id,class,split\n")
        for e in manifest.entries:
            fh.write(f"{e.patch_id},{e.class_label.value},{e.split}\n")
    meta = {
        "seed": manifest.seed,
        "counts": {f"{c}/{s}": n for (c, s), n in sorted(manifest.counts().items())},
        **manifest.metadata,
    }
    csv_path.with_suffix(".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_manifest(csv_path) -> DatasetManifest:
    csv_path = Path(csv_path)
    entries: list[ManifestEntry] = []
    with open(csv_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "patch_id,class,split":
            raise ParseError(f"{csv_path}: unexpected manifest header {header!r}")
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{csv_path}:{ln}: expected 3 columns")
            pid, cls, split = parts
            if split not in SPLITS:
                raise ParseError(f"{csv_path}:{ln}: unknown split {split!r}")
            entries.append(ManifestEntry(pid, parse_class(cls), split))
    seed = 0
    meta_path = csv_path.with_suffix(".json")
    metadata: dict = {}
    if meta_path.is_file():
        metadata = json.loads(meta_path.read_text(encoding="utf-8"))
        seed = int(metadata.get("seed", 0))
    manifest = DatasetManifest(seed=seed, entries=entries, metadata=metadata)
    manifest.validate()
    return manifest
