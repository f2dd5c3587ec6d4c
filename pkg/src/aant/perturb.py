"""Sensor-failure perturbations on raw frames and the sweep harness that
compares accident-confidence traces across them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RawFrameSequence
from .encoders import FrameEncoder, encode_raw_to_record
from .model import AnticipationModel, full_forward

PERTURBATION_KINDS = ("drop_frames", "half_resolution", "gaussian_noise", "occlude_right")


def dropped_frame_indices(n_frames: int, block: int, period: int, offset: int) -> list[int]:
    """Indices i with offset <= (i mod period) < offset + block."""
    return [i for i in range(n_frames) if offset <= (i % period) < offset + block]


def drop_frames(
    raw: RawFrameSequence,
    block: int = 10,
    period: int = 40,
    offset: int = 20,
    mode: str = "blank",
) -> RawFrameSequence:
    """Periodically blank (default) or remove blocks of frames.

    Blank mode preserves the timeline so traces stay frame-aligned; remove
    mode implements the literal deletion reading.
    """
    n = raw.frames.shape[0]
    if not (0 <= block <= period <= n) or not (0 <= offset and offset + block <= period):
        raise ValueError(
            f"invalid drop window: block={block}, period={period}, offset={offset}, n={n}"
        )
    if mode not in ("blank", "remove"):
        raise ValueError(f"mode must be 'blank' or 'remove', got {mode!r}")
    if block == 0:
        return RawFrameSequence(frames=raw.frames.copy(), fps=raw.fps)
    dropped = dropped_frame_indices(n, block, period, offset)
    if mode == "blank":
        frames = raw.frames.copy()
        frames[dropped] = 0
        return RawFrameSequence(frames=frames, fps=raw.fps)
    keep = [i for i in range(n) if i not in set(dropped)]
    if not keep:
        raise ValueError("remove mode would delete every frame")
    return RawFrameSequence(frames=raw.frames[keep].copy(), fps=raw.fps)


def half_resolution(raw: RawFrameSequence) -> RawFrameSequence:
    """2x2 average-pool (round half up), then nearest-neighbor upscale back,
    so the encoder input size is preserved."""
    n, h, w, c = raw.frames.shape
    pixels = raw.frames.astype(np.float64).reshape(n, h // 2, 2, w // 2, 2, c)
    pooled = pixels.mean(axis=(2, 4))
    pooled = np.clip(np.floor(pooled + 0.5), 0, 255).astype(np.uint8)
    upscaled = pooled.repeat(2, axis=1).repeat(2, axis=2)
    return RawFrameSequence(frames=upscaled, fps=raw.fps)


def add_gaussian_noise(
    raw: RawFrameSequence, mean: float = 0.0, std: float = 25.0, seed: int = 0
) -> RawFrameSequence:
    """Seeded additive Gaussian pixel noise, rounded half up and clamped."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0 and mean == 0:
        return RawFrameSequence(frames=raw.frames.copy(), fps=raw.fps)
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, std, size=raw.frames.shape)
    noisy = np.clip(np.floor(raw.frames.astype(np.float64) + noise + 0.5), 0, 255)
    return RawFrameSequence(frames=noisy.astype(np.uint8), fps=raw.fps)


def occlude_right_half(raw: RawFrameSequence) -> RawFrameSequence:
    """Zero all pixels with x >= ceil(W/2)."""
    w = raw.frames.shape[2]
    frames = raw.frames.copy()
    frames[:, :, (w + 1) // 2 :, :] = 0
    return RawFrameSequence(frames=frames, fps=raw.fps)


@dataclass(frozen=True)
class Perturbation:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected one of {PERTURBATION_KINDS}")

    def apply(self, raw: RawFrameSequence) -> RawFrameSequence:
        if self.kind == "drop_frames":
            return drop_frames(raw, **self.params)
        if self.kind == "half_resolution":
            return half_resolution(raw)
        if self.kind == "gaussian_noise":
            return add_gaussian_noise(raw, seed=self.seed, **self.params)
        return occlude_right_half(raw)


def robustness_sweep(
    model: AnticipationModel,
    raw: RawFrameSequence,
    encoder: FrameEncoder,
    perturbations: list[Perturbation],
    toa: int = 0,
    label: int = 0,
) -> dict[str, np.ndarray]:
    """Per-perturbation accident-probability traces, with an unperturbed
    baseline under the key "baseline"."""
    traces = {}

    def trace(sequence: RawFrameSequence, name: str) -> None:
        record = encode_raw_to_record(sequence, encoder, record_id=name, toa=toa, label=label)
        traces[name] = full_forward(model, record).probs

    trace(raw, "baseline")
    for i, perturbation in enumerate(perturbations):
        trace(perturbation.apply(raw), f"{i}_{perturbation.kind}")
    return traces
