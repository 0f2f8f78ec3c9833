"""Superpixel partitions and (relaxed) mask application.

The built-in segmenter is a deterministic grid: a target count is mapped to
``rows = round(sqrt(target*H/W))`` and ``cols = ceil(target/rows)`` (each
clamped to the image), with cells as equal as possible.  External segmenters
plug in through PGM label maps whose pixel values are superpixel ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import netpbm


class SegmentationError(Exception):
    """Invalid partition, mask, or segmentation request."""


@dataclass(frozen=True)
class SuperpixelPartition:
    """Pixel-to-superpixel label map; ids are dense in [0, n_superpixels)."""

    labels: np.ndarray  # (H, W) int64
    n_superpixels: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise SegmentationError("labels must be a 2-D integer array")
        n = int(self.n_superpixels)
        if n < 1:
            raise SegmentationError("need at least one superpixel")
        present = np.bincount(labels.reshape(-1).astype(np.int64), minlength=n) if labels.min() >= 0 else None
        if present is None or labels.max() >= n or len(present) > n or np.any(present[:n] == 0):
            raise SegmentationError(f"labels must cover every id in [0, {n}) with no gaps")
        arr = np.ascontiguousarray(labels.astype(np.int64))
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "n_superpixels", n)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        """Pixel count per superpixel; sums to H*W."""
        return np.bincount(self.labels.reshape(-1), minlength=self.n_superpixels)


def grid_segment(height: int, width: int, target_count: int) -> SuperpixelPartition:
    """Partition an H x W grid into roughly ``target_count`` rectangular cells.

    Over-asks degrade gracefully: rows/cols are clamped to the image, so the
    densest possible result is one superpixel per pixel.
    """
    height, width, target_count = int(height), int(width), int(target_count)
    if height < 1 or width < 1:
        raise SegmentationError(f"bad image size {height}x{width}")
    if target_count < 1:
        raise SegmentationError(f"target_count must be >= 1, got {target_count}")
    rows = int(math.floor(math.sqrt(target_count * height / width) + 0.5))
    rows = min(max(rows, 1), height)
    cols = int(math.ceil(target_count / rows))
    cols = min(max(cols, 1), width)
    row_of = (np.arange(height) * rows) // height
    col_of = (np.arange(width) * cols) // width
    labels = row_of[:, None] * cols + col_of[None, :]
    return SuperpixelPartition(labels=labels, n_superpixels=rows * cols)


def _check_mask(partition: SuperpixelPartition, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (partition.n_superpixels,):
        raise SegmentationError(
            f"mask length {mask.shape} != ({partition.n_superpixels},)"
        )
    if mask.size and (mask.min() < 0.0 or mask.max() > 1.0):
        raise SegmentationError("mask entries must lie in [0, 1]")
    return mask


def apply_mask(
    image: np.ndarray,
    partition: SuperpixelPartition,
    mask: np.ndarray,
    background: float = 0.0,
) -> np.ndarray:
    """Blend each pixel toward the background by its superpixel's mask value.

    Per channel: ``m*x + (1-m)*background`` with m = mask[label(pixel)].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[:2] != partition.shape:
        raise SegmentationError(
            f"image shape {image.shape} does not sit on partition {partition.shape}"
        )
    background = float(background)
    if not 0.0 <= background <= 1.0:
        raise SegmentationError(f"background must lie in [0, 1], got {background}")
    mask = _check_mask(partition, mask)
    m = mask[partition.labels][:, :, None]
    return m * image + (1.0 - m) * background


def export_label_map(path, partition: SuperpixelPartition, ascii_format: bool = False) -> None:
    """Write the partition as a PGM label map (pixel value = superpixel id)."""
    maxval = max(partition.n_superpixels - 1, 1)
    netpbm.write_pgm(path, partition.labels, maxval, ascii_format=ascii_format)


def import_label_map(path) -> SuperpixelPartition:
    """Read a PGM label map produced by this module or an external segmenter."""
    labels, _ = netpbm.read_pgm(path)
    n = int(labels.max()) + 1
    return SuperpixelPartition(labels=labels, n_superpixels=n)
