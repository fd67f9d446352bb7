"""Pipeline subcommands: tile, split, train, eval, report.

Exit codes: 0 success, 1 domain error (bad annotations, shortfalls,
training aborts), 2 usage and IO errors (bad flags, missing files,
malformed config). Re-running a subcommand with the same config and seed
overwrites byte-identical outputs; no file carries a timestamp.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .annotations import parse_annotations, resolve_concordance
from .checkpoint import file_digest, load_checkpoint
from .config import PipelineConfig, load_config
from .dataset import (
    group_pool,
    pool_digest,
    read_manifest,
    sample_test,
    sample_training,
    write_manifest,
)
from .densenet import ArchitectureConfig, DenseNet
from .errors import PipelineError, ValidationError
from .evaluator import evaluate, read_confusion_csv, report
from .geometry import bounding_box
from .imageio import load_raster, open_raster, save_png
from .labels import CLASS_ORDER, parse_class
from .patchfilter import process_candidates
from .tiler import area_filter, choose_chunk_side, iter_partition, write_patch_index
from .trainer import TrainConfig, train


def _find_raster(images_root: Path, wsi_id: str):
    for candidate in (images_root / wsi_id,
                      images_root / f"{wsi_id}.png",
                      images_root / f"{wsi_id}.ppm"):
        if candidate.exists():
            return open_raster(candidate)
    raise FileNotFoundError(
        f"no raster for {wsi_id} under {images_root} "
        f"(tried {wsi_id}/, {wsi_id}.png, {wsi_id}.ppm)"
    )


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def cmd_tile(cfg: PipelineConfig, args) -> int:
    ann_path = _require_file(cfg.path("annotations"), "annotation file")
    images_root = cfg.path("images")
    if not images_root.exists():
        raise FileNotFoundError(f"image root not found: {images_root}")
    out_root = cfg.path("output")
    patches_dir = out_root / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)

    annotations = parse_annotations(ann_path.read_text(encoding="utf-8"))
    regions = resolve_concordance(annotations, cfg.annotations["iou_threshold"])
    if cfg.annotations["require_concordant"]:
        regions = [r for r in regions if r.concordant]

    tiler_cfg = cfg.tiler
    rasters: dict[str, object] = {}
    retained = []
    index_rows = []
    seen_ids: set[str] = set()
    counts = {cls: 0 for cls in CLASS_ORDER}

    for region in regions:
        if region.wsi_id not in rasters:
            rasters[region.wsi_id] = _find_raster(images_root, region.wsi_id)
        raster = rasters[region.wsi_id]
        x0, y0, x1, y1 = bounding_box(region.polygon)
        chunk_side = choose_chunk_side(
            x1 - x0, y1 - y0, region.magnification,
            big_threshold=tiler_cfg["big_region_threshold"],
            big_side=tiler_cfg["big_chunk_side"],
        )
        candidates = area_filter(
            iter_partition(region, chunk_side=chunk_side),
            tiler_cfg["min_area_fraction"],
        )
        by_bbox = {(int(c.x), int(c.y), c.side): c for c in candidates}
        for patch in process_candidates(raster, candidates, region.magnification,
                                        tiler_cfg["white_threshold"]):
            if patch.patch_id in seen_ids:
                raise ValidationError(
                    f"patch id {patch.patch_id} produced by two regions; "
                    "overlapping annotations of different classes?"
                )
            seen_ids.add(patch.patch_id)
            save_png(patch.pixels, patches_dir / f"{patch.patch_id}.png")
            index_rows.append(by_bbox[patch.source_bbox])
            retained.append(patch)
            counts[patch.class_label] += 1

    write_patch_index(index_rows, out_root / "patch_index.csv")
    with open(out_root / "patches.jsonl", "w", encoding="utf-8") as fh:
        for patch in retained:
            record = {
                "patch_id": patch.patch_id,
                "wsi_id": patch.wsi_id,
                "class": patch.class_label.value,
                "x": patch.source_bbox[0],
                "y": patch.source_bbox[1],
                "side": patch.source_bbox[2],
                "area_fraction": round(patch.area_fraction, 6),
                "white_fraction": round(patch.white_fraction, 6),
                "magnification": patch.source_magnification,
                "resize_applied": patch.resize_applied,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    for cls in CLASS_ORDER:
        print(f"{cls.value}: {counts[cls]}")
    return 0


def _read_pool(out_root: Path):
    pool_path = _require_file(out_root / "patches.jsonl",
                              "patch pool (run tile first)")
    records = []
    with open(pool_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def cmd_split(cfg: PipelineConfig, args) -> int:
    out_root = cfg.path("output")
    records = _read_pool(out_root)
    ds = cfg.dataset
    seed = ds["seed"]
    set2_ids = set(ds["set2_wsi_ids"])
    set1 = [(r["patch_id"], parse_class(r["class"]))
            for r in records if r["wsi_id"] not in set2_ids]
    set2 = [(r["patch_id"], parse_class(r["class"]))
            for r in records if r["wsi_id"] in set2_ids]

    pool1 = group_pool(set1)
    manifest = sample_training(pool1, ds["train_per_class"], ds["val_fraction"],
                               seed)
    exclusions = {e.patch_id for e in manifest.entries}
    # derived seeds keep the three draws independent but reproducible
    manifest.entries.extend(
        sample_test(pool1, ds["test_per_class"], exclusions, seed + 1, "test1"))
    if set2:
        manifest.entries.extend(
            sample_test(group_pool(set2), ds["test_per_class"], set(),
                        seed + 2, "test2"))
    manifest.metadata.update({
        "test_per_class": ds["test_per_class"],
        "set1_digest": pool_digest(pid for pid, _ in set1),
        "set2_digest": pool_digest(pid for pid, _ in set2),
    })
    manifest.validate()
    write_manifest(manifest, out_root / "manifest.csv")
    for (cls, split), n in sorted(manifest.counts().items()):
        print(f"{cls}/{split}: {n}")
    return 0


def _build_model(cfg: PipelineConfig, seed: int) -> DenseNet:
    ar = cfg.arch
    config = ArchitectureConfig(
        growth_rate=ar["growth_rate"], block_layers=(2, 2, 2, 2),
        compression=ar["compression"], num_classes=len(CLASS_ORDER),
        input_size=ar["input_size"], stem=ar["stem"],
    )
    return DenseNet(config, seed=seed)


def _patch_loader(out_root: Path):
    patches_dir = out_root / "patches"

    def load(patch_id: str) -> np.ndarray:
        return load_raster(patches_dir / f"{patch_id}.png")

    return load


def cmd_train(cfg: PipelineConfig, args) -> int:
    out_root = cfg.path("output")
    manifest = read_manifest(_require_file(out_root / "manifest.csv",
                                           "manifest (run split first)"))
    seed = cfg.dataset["seed"]
    model = _build_model(cfg, seed)
    tr = cfg.train
    train_cfg = TrainConfig(epochs=tr["epochs"], batch_size=tr["batch_size"],
                            lr=tr["lr"], seed=seed, hflip=tr["hflip"],
                            vflip=tr["vflip"], rot90=tr["rot90"],
                            brightness=tr["brightness"])
    result = train(model, manifest.entries, _patch_loader(out_root),
                   train_cfg, out_root / "train")
    last = result.records[-1]
    print(f"epochs: {len(result.records)}, steps: {result.total_steps}")
    print(f"final train_loss: {last.train_loss:.6f}")
    print(f"best epoch: {result.best_epoch} (val_acc {result.best_val_acc:.4f})")
    return 0


def cmd_eval(cfg: PipelineConfig, args) -> int:
    out_root = cfg.path("output")
    manifest = read_manifest(_require_file(out_root / "manifest.csv",
                                           "manifest (run split first)"))
    ckpt = Path(args.checkpoint) if args.checkpoint else out_root / "train" / "best.ckpt"
    _require_file(ckpt, "checkpoint (run train first)")
    model = load_checkpoint(ckpt)
    entries = manifest.split_entries(args.split)
    matrix = evaluate(model, entries, _patch_loader(out_root),
                      batch_size=cfg.train["batch_size"])
    metadata = {
        "split": args.split,
        "seed": cfg.dataset["seed"],
        "checkpoint": ckpt.name,
        "checkpoint_digest": file_digest(ckpt),
    }
    report(matrix, out_root / f"eval_{args.split}", metadata)
    for i, cls in enumerate(CLASS_ORDER):
        print(f"{cls.value} accuracy: {matrix.per_class_accuracy[i]:.3f}")
    print(f"overall accuracy: {matrix.overall_accuracy:.3f}")
    return 0


def cmd_report(cfg: PipelineConfig, args) -> int:
    out_root = cfg.path("output")
    eval_dir = out_root / f"eval_{args.split}"
    matrix = read_confusion_csv(_require_file(eval_dir / "confusion.csv",
                                              "confusion matrix (run eval first)"))
    metadata = {}
    metrics_path = eval_dir / "metrics.json"
    if metrics_path.is_file():
        existing = json.loads(metrics_path.read_text(encoding="utf-8"))
        metadata = {k: v for k, v in existing.items()
                    if k in ("split", "seed", "checkpoint", "checkpoint_digest")}
    report(matrix, eval_dir, metadata)
    print(json.dumps(matrix.counts.tolist()))
    for i, cls in enumerate(CLASS_ORDER):
        print(f"{cls.value} accuracy: {matrix.per_class_accuracy[i]:.3f}")
    return 0


_COMMANDS = {
    "tile": cmd_tile,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histodense",
        description="Slide annotation tiling, dataset splitting, and "
                    "from-scratch CNN training/evaluation.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON config file (defaults apply otherwise)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the dataset seed")
    parser.add_argument("--dry-run", action="store_true",
                        help="print the resolved config and exit")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools (best effort)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tile", help="cut annotated regions into filtered patches")
    sub.add_parser("split", help="build the train/val/test manifest")
    sub.add_parser("train", help="train the classifier on the manifest")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p_eval.add_argument("--split", choices=("test1", "test2"), default="test1")
    p_eval.add_argument("--checkpoint", default=None)
    p_report = sub.add_parser("report", help="re-render report files from confusion.csv")
    p_report.add_argument("--split", choices=("test1", "test2"), default="test1")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    overrides = None
    if args.seed is not None:
        overrides = {"dataset": {"seed": args.seed}}
    try:
        cfg = load_config(args.config, overrides)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.dry_run:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0

    try:
        return _COMMANDS[args.command](cfg, args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
