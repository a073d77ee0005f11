"""Reference aggregation of captured attention into per-term heatmaps.

Mirrors the engine's definition (bicubic upscale with the a=-0.5 kernel,
half-pixel centers, clamped edges, then a plain sum over every slice) but
is implemented separately, as a per-axis tap-gather rather than the
engine's approach, so the two sides of the round-trip test share no code.
"""
from __future__ import annotations

import numpy as np

_A = -0.5


def _axis_taps(src_n: int, out_n: int):
    """Four clamped source indices and kernel weights per output position."""
    pos = (np.arange(out_n) + 0.5) * (src_n / out_n) - 0.5
    base = np.floor(pos).astype(int)
    frac = pos - base
    idx = np.stack([np.clip(base + m, 0, src_n - 1) for m in range(-1, 3)])
    t = np.abs(np.stack([m - frac for m in range(-1, 3)]))
    w = np.where(
        t <= 1.0,
        (_A + 2.0) * t**3 - (_A + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, _A * t**3 - 5.0 * _A * t**2 + 8.0 * _A * t - 4.0 * _A, 0.0),
    )
    return idx, w


def upscale(grid: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    src_h, src_w = grid.shape
    if (src_w, src_h) == (out_w, out_h):
        return grid.copy()
    yi, yw = _axis_taps(src_h, out_h)
    xi, xw = _axis_taps(src_w, out_w)
    rows = np.zeros((out_h, src_w))
    for m in range(4):
        rows += yw[m][:, None] * grid[yi[m], :]
    out = np.zeros((out_h, out_w))
    for m in range(4):
        out += xw[m][None, :] * rows[:, xi[m]]
    return np.maximum(out, 0.0)


def aggregate(slices, out_w: int, out_h: int) -> np.ndarray:
    """Sum of upscaled grids over all slices; shape (n_terms, out_h, out_w).

    ``slices`` as produced by a backend or formats.unpack_stack:
    (pathway, timestep, layer, head, grids(n_terms, h, w)).
    """
    if not slices:
        raise ValueError("no slices to aggregate")
    n_terms = np.asarray(slices[0][4]).shape[0]
    total = np.zeros((n_terms, out_h, out_w))
    for _, _, _, _, grids in slices:
        grids = np.asarray(grids, dtype=np.float64)
        for k in range(n_terms):
            total[k] += upscale(grids[k], out_w, out_h)
    return total
