"""Aggregation of raw cross-attention stacks into per-token heatmaps.

A stack holds one score grid per (pathway, timestep, layer, head, token).
The per-token heatmap is the plain sum of every slice's grid after bicubic
upscaling to the target size; no normalization is applied, because the
downstream quantile threshold is invariant to monotone rescaling. Min-max
normalization is available separately for display.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Heatmap2D, bicubic_upscale

__all__ = [
    "PATHWAYS",
    "AttentionSlice",
    "AttentionStack",
    "TokenHeatmapSet",
    "aggregate_token_heatmap",
    "aggregate_all",
    "normalize_for_display",
]

PATHWAYS = ("down", "up")


@dataclass(frozen=True)
class AttentionSlice:
    """One (pathway, timestep, layer, head) capture: a grid per token.

    ``scores`` has shape (n_tokens, grid_h, grid_w), finite and >= 0.
    """

    pathway: str
    timestep: int
    layer: int
    head: int
    scores: np.ndarray

    def __post_init__(self):
        if self.pathway not in PATHWAYS:
            raise ValueError(f"pathway must be one of {PATHWAYS}, got {self.pathway!r}")
        if self.timestep < 0 or self.layer < 0 or self.head < 0:
            raise ValueError("timestep, layer and head must be >= 0")
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"scores must have shape (tokens, h, w), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("attention scores must be finite")
        if np.any(arr < 0):
            raise ValueError("attention scores must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    @property
    def key(self) -> tuple:
        return (self.pathway, self.timestep, self.layer, self.head)

    @property
    def grid_w(self) -> int:
        return self.scores.shape[2]

    @property
    def grid_h(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class AttentionStack:
    """Raw cross-attention scores for one generated image."""

    tokens: tuple
    slices: tuple

    def __init__(self, tokens, slices):
        object.__setattr__(self, "tokens", tuple(tokens))
        object.__setattr__(self, "slices", tuple(slices))
        seen = set()
        for s in self.slices:
            if s.scores.shape[0] != len(self.tokens):
                raise ValueError(
                    f"slice {s.key} provides {s.scores.shape[0]} grids for {len(self.tokens)} tokens"
                )
            if s.key in seen:
                raise ValueError(f"duplicate slice key {s.key}")
            seen.add(s.key)


@dataclass(frozen=True)
class TokenHeatmapSet:
    """One aggregated heatmap per token, all with identical dims."""

    tokens: tuple
    heatmaps: tuple

    def __init__(self, tokens, heatmaps):
        tokens = tuple(tokens)
        heatmaps = tuple(heatmaps)
        if len(tokens) != len(heatmaps):
            raise ValueError("one heatmap per token required")
        dims = {(h.width, h.height) for h in heatmaps}
        if len(dims) > 1:
            raise ValueError(f"heatmap dims differ: {sorted(dims)}")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "heatmaps", heatmaps)

    def __len__(self) -> int:
        return len(self.tokens)

    def heatmap_for(self, token: str) -> Heatmap2D:
        try:
            return self.heatmaps[self.tokens.index(token)]
        except ValueError:
            raise KeyError(f"no heatmap for token {token!r}") from None


def aggregate_token_heatmap(
    stack: AttentionStack, token_index: int, out_w: int, out_h: int
) -> Heatmap2D:
    """Sum every slice's grid for one token after upscaling to (out_w, out_h).

    Both pathways, all timesteps, layers and heads contribute; slices are
    summed in sorted key order so results are identical regardless of how the
    stack was assembled or parallelized.
    """
    if not 0 <= token_index < len(stack.tokens):
        raise ValueError(f"token index {token_index} out of range for {len(stack.tokens)} tokens")
    total = np.zeros((out_h, out_w))
    for s in sorted(stack.slices, key=lambda s: s.key):
        if s.grid_w > out_w or s.grid_h > out_h:
            raise ValueError(
                f"slice {s.key} grid {s.grid_w}x{s.grid_h} exceeds output {out_w}x{out_h}"
            )
        up = bicubic_upscale(Heatmap2D(s.scores[token_index]), out_w, out_h)
        total += up.data
    return Heatmap2D(total)


def aggregate_all(stack: AttentionStack, out_w: int, out_h: int) -> TokenHeatmapSet:
    """Aggregate every token in the stack; token order is preserved."""
    heatmaps = [
        aggregate_token_heatmap(stack, k, out_w, out_h) for k in range(len(stack.tokens))
    ]
    return TokenHeatmapSet(stack.tokens, heatmaps)


def normalize_for_display(hm: Heatmap2D) -> Heatmap2D:
    """Min-max rescale to [0, 1] for rendering only.

    A constant grid maps to all zeros. The verdict pipeline never calls
    this; quantile thresholding already ignores scale and offset.
    """
    lo = float(hm.data.min())
    hi = float(hm.data.max())
    if hi == lo:
        return Heatmap2D(np.zeros_like(hm.data))
    return Heatmap2D((hm.data - lo) / (hi - lo))
