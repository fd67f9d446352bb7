"""Pixel extraction, white-content filtering, and patch standardization.

Candidate patches are cut from the source raster at their full native
side (256 px at 20x, 512 px at 40x). A 16-bin grey-level histogram over
the raw pixels drives the white filter: a patch is discarded when the
top bin (grey >= 240) holds strictly more than 10% of its pixels.
Retained 40x patches are then downsampled 2:1 by 2x2 box averaging so
every stored patch is 256x256.  Pixels outside the clipped polygon are
kept as-is; filtering is by area and white content only, no masking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from histodense.errors import ShapeError, ValidationError
from histodense.labels import ClassLabel
from histodense.tiler import CandidatePatch

GREY_BINS = 16
WHITE_BIN = GREY_BINS - 1  # grey 240..255
DEFAULT_WHITE_THRESHOLD = 0.10
STANDARD_SIDE = 256

# ITU-R 601 luma weights, rounded half-up to an integer grey level
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Patch:
    """A retained, standardized 256x256 patch with its provenance."""

    wsi_id: str
    class_label: ClassLabel
    pixels: np.ndarray  # uint8 (256, 256, 3)
    source_bbox: tuple[int, int, int]  # x, y, side in source pixels
    area_fraction: float
    white_fraction: float
    source_magnification: int
    resize_applied: bool

    @property
    def patch_id(self) -> str:
        x, y, _ = self.source_bbox
        return f"{self.wsi_id}_{x}_{y}"


def extract_pixels(source_image, bbox: tuple[int, int, int]) -> np.ndarray:
    """Cut the square sub-raster (x, y, side) out of the source.

    ``source_image`` is either an (H, W, 3) uint8 array or an object with
    ``read_region(x, y, w, h)`` plus ``width``/``height`` attributes.
    """
    x, y, side = int(bbox[0]), int(bbox[1]), int(bbox[2])
    if isinstance(source_image, np.ndarray):
        h, w = source_image.shape[:2]
        if x < 0 or y < 0 or x + side > w or y + side > h:
            raise ValidationError(
                f"bbox (x={x}, y={y}, side={side}) outside source of {w}x{h}"
            )
        return np.ascontiguousarray(source_image[y : y + side, x : x + side])
    w, h = source_image.width, source_image.height
    if x < 0 or y < 0 or x + side > w or y + side > h:
        raise ValidationError(
            f"bbox (x={x}, y={y}, side={side}) outside source of {w}x{h}"
        )
    return source_image.read_region(x, y, side, side)


def grey_levels(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel grey level: round-half-up of the 601 luma, clamped to 0..255."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) pixels, got {pixels.shape}")
    grey = np.floor(pixels.astype(np.float64) @ _LUMA + 0.5)
    return np.clip(grey, 0, 255).astype(np.uint8)


def grey_histogram16(pixels: np.ndarray) -> np.ndarray:
    """16 equal-width grey bins over 0..255; the last bin covers 240..255."""
    grey = grey_levels(pixels)
    bins = (grey.ravel() >> 4).astype(np.intp)  # floor(g / 16)
    return np.bincount(bins, minlength=GREY_BINS).astype(np.int64)


def white_filter(
    pixels: np.ndarray, threshold: float = DEFAULT_WHITE_THRESHOLD
) -> tuple[bool, float]:
    """(keep, white_fraction) for a raw patch.

    Discards when the white bin holds strictly more than ``threshold`` of
    the pixels, so a patch at exactly the threshold is kept.
    """
    hist = grey_histogram16(pixels)
    total = int(hist.sum())
    white_fraction = float(hist[WHITE_BIN] / total)
    return white_fraction <= threshold, white_fraction


def standardize(pixels: np.ndarray, magnification: int) -> np.ndarray:
    """Bring a raw patch to 256x256: 40x patches are 2:1 box-averaged,
    20x patches pass through unchanged."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeError(f"expected square (S, S, 3) pixels, got {pixels.shape}")
    side = pixels.shape[0]
    if magnification == 20:
        if side != STANDARD_SIDE:
            raise ShapeError(f"20x patch must be {STANDARD_SIDE} px, got {side}")
        return pixels
    if magnification == 40:
        if side != 2 * STANDARD_SIDE:
            raise ShapeError(f"40x patch must be {2 * STANDARD_SIDE} px, got {side}")
        blocks = pixels.reshape(STANDARD_SIDE, 2, STANDARD_SIDE, 2, 3)
        sums = blocks.sum(axis=(1, 3), dtype=np.uint32)
        return ((sums + 2) // 4).astype(np.uint8)  # round-half-up mean of 4
    raise ValidationError(f"magnification must be 20 or 40, got {magnification!r}")


def process_candidates(
    source_image,
    candidates: Iterable[CandidatePatch],
    magnification: int,
    white_threshold: float = DEFAULT_WHITE_THRESHOLD,
) -> Iterator[Patch]:
    """Extract, white-filter, and standardize candidate patches in order."""
    for cand in candidates:
        raw = extract_pixels(source_image, (int(cand.x), int(cand.y), cand.side))
        keep, white_fraction = white_filter(raw, white_threshold)
        if not keep:
            continue
        pixels = standardize(raw, magnification)
        yield Patch(
            wsi_id=cand.wsi_id,
            class_label=cand.class_label,
            pixels=pixels,
            source_bbox=(int(cand.x), int(cand.y), cand.side),
            area_fraction=cand.area_fraction,
            white_fraction=white_fraction,
            source_magnification=magnification,
            resize_applied=magnification == 40,
        )
