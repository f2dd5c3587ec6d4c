"""Frame encoders: raw pixels to per-frame feature rows.

The mock encoder is detector-free by construction: per frame it takes 4x4
grid-cell channel means (48 values) through a fixed seeded projection, then
L2-normalizes. It exists so pixel-level perturbations propagate to features.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .data import RawFrameSequence, VideoRecord


class FrameEncoder(Protocol):
    dimension: int

    def encode(self, raw: RawFrameSequence) -> np.ndarray: ...


def grid_cell_means(frames: np.ndarray) -> np.ndarray:
    """Per-frame 4x4 grid of per-cell per-channel means, flattened to (N, 48)."""
    n, h, w, c = frames.shape
    if h < 4 or w < 4:
        raise ValueError(f"frames must be at least 4x4, got {h}x{w}")
    row_edges = [h * i // 4 for i in range(5)]
    col_edges = [w * j // 4 for j in range(5)]
    out = np.empty((n, 4, 4, c), dtype=np.float64)
    pixels = frames.astype(np.float64)
    for i in range(4):
        for j in range(4):
            cell = pixels[:, row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1], :]
            out[:, i, j, :] = cell.mean(axis=(1, 2))
    return out.reshape(n, 48)


def mock_encode_frames(raw: RawFrameSequence, dim: int, seed: int) -> np.ndarray:
    """Deterministic (N, dim) float32 features; all-black frames map to zero rows."""
    cells = grid_cell_means(raw.frames)
    rng = np.random.default_rng(seed)
    mixing = rng.normal(0.0, 1.0 / math.sqrt(48), size=(48, dim))
    rows = cells @ mixing
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (rows / norms).astype(np.float32)


class MockFrameEncoder:
    def __init__(self, dimension: int = 512, seed: int = 0):
        self.dimension = dimension
        self.seed = seed

    def encode(self, raw: RawFrameSequence) -> np.ndarray:
        return mock_encode_frames(raw, self.dimension, self.seed)


def encode_raw_to_record(
    raw: RawFrameSequence, encoder: FrameEncoder, record_id: str, toa: int, label: int
) -> VideoRecord:
    return VideoRecord(id=record_id, features=encoder.encode(raw), fps=raw.fps, toa=toa, label=label)
