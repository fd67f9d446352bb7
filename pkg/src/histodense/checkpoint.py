"""Flat binary checkpoint files for the numpy network.

Layout: 8-byte magic, little-endian uint64 header length, a JSON header
describing the architecture and every array (name, shape, dtype, byte
offset), then the raw array bytes in C order. Arrays round-trip
bit-exactly; optimizer state is not stored.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .densenet import ArchitectureConfig, DenseNet
from .errors import ValidationError

MAGIC = b"HDCKPT01"


def _array_records(arrays: list[tuple[str, np.ndarray]], start: int):
    records = []
    offset = start
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        records.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        offset += arr.nbytes
    return records


def save_checkpoint(model: DenseNet, path: str | Path,
                    extra: dict | None = None) -> None:
    path = Path(path)
    params = [(p.name, p.value) for p in model.parameters()]
    state = sorted(model.state_arrays().items())
    counters = {f"{bn.name}.num_batches_tracked": bn.num_batches_tracked
                for bn in model.batchnorm_modules()}

    param_bytes = sum(v.nbytes for _, v in params)
    header = {
        "arch": dataclasses.asdict(model.config),
        "param_count": model.param_count,
        "params": _array_records(params, 0),
        "state": _array_records(state, param_bytes),
        "counters": counters,
        "extra": extra or {},
    }

    header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_blob)))
        fh.write(header_blob)
        for _, value in params:
            fh.write(np.ascontiguousarray(value).tobytes())
        for _, value in state:
            fh.write(np.ascontiguousarray(value).tobytes())


def _read_header(path: Path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
    return header, len(MAGIC) + 8 + header_len


def read_header(path: str | Path) -> dict:
    header, _ = _read_header(Path(path))
    return header


def load_checkpoint(path: str | Path, model: DenseNet | None = None) -> DenseNet:
    """Load arrays into model, or build a fresh one from the stored config."""
    path = Path(path)
    header, data_start = _read_header(path)
    if model is None:
        arch = dict(header["arch"])
        arch["block_layers"] = tuple(arch["block_layers"])
        model = DenseNet(ArchitectureConfig(**arch), seed=0)
    if model.param_count != header["param_count"]:
        raise ValidationError(
            f"checkpoint holds {header['param_count']} parameters, "
            f"model expects {model.param_count}"
        )
    blob = path.read_bytes()[data_start:]

    def restore(records, targets: dict[str, np.ndarray]):
        for rec in records:
            if rec["name"] not in targets:
                raise ValidationError(f"unknown array {rec['name']} in {path}")
            target = targets[rec["name"]]
            if list(target.shape) != rec["shape"]:
                raise ValidationError(
                    f"{rec['name']}: checkpoint shape {rec['shape']} vs "
                    f"model shape {list(target.shape)}"
                )
            arr = np.frombuffer(
                blob, dtype=np.dtype(rec["dtype"]),
                count=int(np.prod(rec["shape"], dtype=np.int64)) if rec["shape"] else 1,
                offset=rec["offset"],
            ).reshape(rec["shape"])
            target[...] = arr

    restore(header["params"], {p.name: p.value for p in model.parameters()})
    restore(header["state"], model.state_arrays())
    for bn in model.batchnorm_modules():
        key = f"{bn.name}.num_batches_tracked"
        if key in header["counters"]:
            bn.num_batches_tracked = int(header["counters"][key])
    return model


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
