"""Raster access: plain images, the toy tiled-slide format, resizing.

Gigapixel sources are exercised through a tiled directory layout
(``tiles/{row}_{col}.png`` plus ``meta.json`` with width, height,
magnification, tile_size) so regions can be read without loading the
whole slide. Plain PNG/PPM rasters are wrapped in the same read_region
interface.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from histodense.errors import ParseError, ValidationError


def load_raster(path) -> np.ndarray:
    """Read a plain raster file into an (H, W, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_png(pixels: np.ndarray, path) -> None:
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


class ArrayRaster:
    """In-memory raster with the read_region interface."""

    def __init__(self, pixels: np.ndarray, magnification: int | None = None):
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3) pixels, got {pixels.shape}")
        self.pixels = pixels
        self.height, self.width = pixels.shape[:2]
        self.magnification = magnification

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValidationError(
                f"region (x={x}, y={y}, w={w}, h={h}) outside raster "
                f"{self.width}x{self.height}"
            )
        return np.ascontiguousarray(self.pixels[y : y + h, x : x + w])


class TiledRaster:
    """Reader for the tiled slide directory format.

    Only the tiles overlapping a requested region are opened, so slides
    much larger than memory can be tiled patch by patch.
    """

    def __init__(self, root):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.is_file():
            raise ParseError(f"tiled raster {self.root} is missing meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        try:
            self.width = int(meta["width"])
            self.height = int(meta["height"])
            self.magnification = int(meta["magnification"])
            self.tile_size = int(meta["tile_size"])
        except KeyError as exc:
            raise ParseError(
                f"{meta_path}: missing key {exc.args[0]!r}"
            ) from None

    def _tile(self, row: int, col: int) -> np.ndarray:
        path = self.root / "tiles" / f"{row}_{col}.png"
        if not path.is_file():
            raise ParseError(f"missing tile {path}")
        return load_raster(path)

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValidationError(
                f"region (x={x}, y={y}, w={w}, h={h}) outside raster "
                f"{self.width}x{self.height}"
            )
        out = np.empty((h, w, 3), dtype=np.uint8)
        ts = self.tile_size
        for row in range(y // ts, (y + h - 1) // ts + 1):
            for col in range(x // ts, (x + w - 1) // ts + 1):
                tile = self._tile(row, col)
                ty0, tx0 = row * ts, col * ts
                y0 = max(y, ty0)
                x0 = max(x, tx0)
                y1 = min(y + h, ty0 + tile.shape[0])
                x1 = min(x + w, tx0 + tile.shape[1])
                out[y0 - y : y1 - y, x0 - x : x1 - x] = tile[
                    y0 - ty0 : y1 - ty0, x0 - tx0 : x1 - tx0
                ]
        return out


def write_tiled_raster(pixels: np.ndarray, root, magnification: int, tile_size: int = 512) -> None:
    """Split an array into the tiled slide directory format."""
    root = Path(root)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    h, w = pixels.shape[:2]
    meta = {"width": w, "height": h, "magnification": magnification, "tile_size": tile_size}
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    for row in range(math.ceil(h / tile_size)):
        for col in range(math.ceil(w / tile_size)):
            tile = pixels[
                row * tile_size : min((row + 1) * tile_size, h),
                col * tile_size : min((col + 1) * tile_size, w),
            ]
            save_png(tile, root / "tiles" / f"{row}_{col}.png")


def open_raster(path):
    """Open a plain raster file or a tiled raster directory."""
    path = Path(path)
    if path.is_dir():
        return TiledRaster(path)
    return ArrayRaster(load_raster(path))


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array.

    Sample points follow the half-pixel convention
    src = (dst + 0.5) * scale - 0.5, clamped to the source extent.
    """
    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float32)
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(sy - y0, 0.0, 1.0).astype(image.dtype)
    wx = np.clip(sx - x0, 0.0, 1.0).astype(image.dtype)

    top = image[y0][:, x0] * (1 - wx)[None, :, None] + image[y0][:, x1] * wx[None, :, None]
    bot = image[y1][:, x0] * (1 - wx)[None, :, None] + image[y1][:, x1] * wx[None, :, None]
    return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
