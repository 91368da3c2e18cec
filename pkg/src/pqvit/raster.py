"""Plot a sampled waveform as a fixed-geometry grayscale image.

The trace is a 1-pixel Bresenham polyline through the samples, drawn dark on
a light background with no axes or margins.  The amplitude axis is fixed for
every image so absolute levels (sag vs. swell) survive rasterization.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RasterDataError(ValueError):
    """Signal samples cannot be plotted (non-finite or too short)."""


@dataclass(frozen=True)
class ImageSpec:
    height: int = 224
    width: int = 224
    channels: int = 1
    amp_range: tuple[float, float] = (-2.2, 2.2)
    line_value: float = 0.0
    bg_value: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError("image dimensions must be positive")
        lo, hi = self.amp_range
        if not lo < hi:
            raise ValueError(f"amp_range must satisfy y_min < y_max, got {self.amp_range}")
        for v in (self.line_value, self.bg_value):
            if not 0.0 <= v <= 1.0:
                raise ValueError("pixel intensities must lie in [0, 1]")


@dataclass
class Image:
    pixels: np.ndarray  # (H, W, C), row 0 is the top of the plot
    source_label: int | None = None


def sample_coords(samples: np.ndarray, spec: ImageSpec) -> tuple[np.ndarray, np.ndarray]:
    """Integer (column, row-from-bottom) of each sample."""
    n = len(samples)
    k = np.arange(n, dtype=np.int64)
    cols = (k * (spec.width - 1)) // (n - 1)
    lo, hi = spec.amp_range
    v = np.clip(np.asarray(samples, dtype=np.float64), lo, hi)
    rows = np.floor((spec.height - 1) * (v - lo) / (hi - lo)).astype(np.int64)
    return cols, np.clip(rows, 0, spec.height - 1)


def bresenham(x0: int, y0: int, x1: int, y1: int):
    """Yield the integer points of the segment from (x0, y0) to (x1, y1)."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize(samples, spec: ImageSpec = ImageSpec(), label: int | None = None) -> Image:
    """Draw ``samples`` as a polyline; returns an (H, W, C) image in [0, 1]."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 2:
        raise RasterDataError("need a 1-d signal with at least 2 samples")
    if not np.all(np.isfinite(samples)):
        raise RasterDataError("signal contains non-finite values")
    mask = trace_mask(samples, spec)
    plane = np.where(mask, spec.line_value, spec.bg_value)
    pixels = np.repeat(plane[:, :, None], spec.channels, axis=2)
    return Image(pixels=pixels, source_label=label)


def trace_mask(samples: np.ndarray, spec: ImageSpec) -> np.ndarray:
    """Boolean (H, W) array, True where the trace is drawn."""
    cols, rows = sample_coords(samples, spec)
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    top = spec.height - 1
    for i in range(len(cols) - 1):
        x0, y0, x1, y1 = int(cols[i]), int(rows[i]), int(cols[i + 1]), int(rows[i + 1])
        if x0 == x1:
            # vertical run: fill directly
            a, b = (y0, y1) if y0 <= y1 else (y1, y0)
            mask[top - b:top - a + 1, x0] = True
            continue
        for x, y in bresenham(x0, y0, x1, y1):
            mask[top - y, x] = True
    return mask


def to_model_input(image: Image | np.ndarray) -> np.ndarray:
    """Map intensities from [0, 1] to [-1, 1] via ``v -> 2v - 1``."""
    px = image.pixels if isinstance(image, Image) else np.asarray(image)
    return 2.0 * px - 1.0


def to_pgm_bytes(image: Image) -> bytes:
    """Binary PGM (P5, maxval 255) of the first channel."""
    plane = image.pixels[:, :, 0]
    h, w = plane.shape
    q = np.floor(255.0 * np.asarray(plane, dtype=np.float64) + 0.5).astype(np.uint8)
    return f"P5 {w} {h} 255\n".encode("ascii") + q.tobytes()


def write_pgm(path: str | Path, image: Image) -> None:
    Path(path).write_bytes(to_pgm_bytes(image))


def read_pgm(path: str | Path) -> np.ndarray:
    """Parse a P5 file written by :func:`write_pgm`; returns uint8 (H, W)."""
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    magic, w, h, maxval = header.split()
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"unsupported PGM header {header!r}")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w))
