"""Dense 2-D grid primitives: heatmaps, binary masks, quantiles, bicubic
resampling, and intersection-over-union.

Everything here is a pure function on immutable inputs. Grids are stored as
read-only numpy arrays in (height, width) layout; values are float64
internally regardless of on-disk precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Heatmap2D",
    "BinaryMask",
    "quantile",
    "bicubic_upscale",
    "threshold_mask",
    "iou",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Heatmap2D:
    """A dense grid of finite, non-negative attention intensities.

    ``data`` is row-major with shape (height, width).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"heatmap must be 2-D with positive dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("heatmap values must be finite")
        if np.any(arr < 0):
            raise ValueError("heatmap values must be non-negative")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the grid."""
        return self.data.reshape(-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Heatmap2D):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class BinaryMask:
    """A 0/1 grid, same layout conventions as :class:`Heatmap2D`."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be 2-D with positive dims, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask elements must be 0 or 1")
            arr = arr.astype(bool)
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))


def quantile(values, q: float) -> float:
    """Linearly interpolated q-quantile of a non-empty sequence.

    With n values sorted ascending as v[0..n-1] and position p = (n-1)*q,
    returns v[floor(p)] + (p - floor(p)) * (v[floor(p)+1] - v[floor(p)]).
    """
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty sequence")
    if not (0.0 <= q <= 1.0):
        raise ValueError("quantile out of range")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    v = np.sort(arr)
    p = (v.size - 1) * float(q)
    lo = int(np.floor(p))
    frac = p - lo
    if frac == 0.0:
        return float(v[lo])
    return float(v[lo] + frac * (v[lo + 1] - v[lo]))


def _cubic_weights(frac: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution weights for the four taps at offsets -1..2.

    ``frac`` is the fractional sample position in [0, 1); returns shape
    (len(frac), 4). Weights sum to 1 for every phase.
    """
    # tap distances |t| for offsets m = -1, 0, 1, 2 relative to the sample
    t = np.abs(np.arange(-1, 3)[None, :] - frac[:, None])
    near = (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    far = a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_matrix(src_n: int, out_n: int) -> np.ndarray:
    """Sparse-in-spirit (out_n, src_n) weight matrix for one axis.

    Pixel-center mapping src = (i + 0.5) * src_n / out_n - 0.5 with
    clamp-to-edge: out-of-range taps fold their weight onto the edge sample.
    """
    pos = (np.arange(out_n) + 0.5) * (src_n / out_n) - 0.5
    base = np.floor(pos).astype(int)
    weights = _cubic_weights(pos - base)
    mat = np.zeros((out_n, src_n))
    for m in range(-1, 3):
        idx = np.clip(base + m, 0, src_n - 1)
        np.add.at(mat, (np.arange(out_n), idx), weights[:, m + 1])
    return mat


def bicubic_upscale(src: Heatmap2D, out_w: int, out_h: int) -> Heatmap2D:
    """Resample ``src`` to (out_w, out_h) with the a=-0.5 cubic kernel.

    Output dims must be >= source dims (equal dims reproduce the input
    exactly). Kernel overshoot below zero is clamped back to zero so the
    result remains a valid heatmap.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dims must be positive")
    if out_w < src.width or out_h < src.height:
        raise ValueError(
            f"cannot downscale: output {out_w}x{out_h} smaller than source {src.width}x{src.height}"
        )
    if (out_w, out_h) == (src.width, src.height):
        return src
    rows = _resample_matrix(src.height, out_h)
    cols = _resample_matrix(src.width, out_w)
    out = rows @ src.data @ cols.T
    np.maximum(out, 0.0, out=out)
    return Heatmap2D(out)


def threshold_mask(hm: Heatmap2D, q: float = 0.9) -> BinaryMask:
    """Keep the cells at or above the q-quantile of the heatmap's values.

    Ties at the threshold are included, so an all-equal heatmap yields an
    all-ones mask rather than an empty one.
    """
    cut = quantile(hm.values, q)
    return BinaryMask(hm.data >= cut)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two same-shaped masks.

    Two empty masks have IoU 0: an empty mask signals no association, and
    reporting 1 would fabricate a maximal one.
    """
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask dims differ: {a.bits.shape} vs {b.bits.shape}")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return inter / union
