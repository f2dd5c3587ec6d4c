"""Dataset types, the AANT feature-file format, synthetic data, and splits."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

FEATURE_MAGIC = b"AANT"
FEATURE_VERSION = 1

NEGATIVE = 0
POSITIVE = 1


class FeatureFileError(ValueError):
    """Raised when a feature file is malformed (magic, version, truncation)."""


@dataclass(frozen=True)
class VideoRecord:
    """One video: per-frame features, frame rate, accident frame and label.

    ``toa`` is the accident frame index (1..N) for positives and 0 for
    negatives; toa = 0 means "use all N frames" downstream.
    """

    id: str
    features: np.ndarray  # (N, D) float32
    fps: float
    toa: int
    label: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"record {self.id!r} has non-finite feature values")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be positive and finite, got {self.fps}")
        if self.label not in (NEGATIVE, POSITIVE):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.label == POSITIVE and not (1 <= self.toa <= feats.shape[0]):
            raise ValueError(f"positive record needs 1 <= toa <= N, got toa={self.toa}, N={feats.shape[0]}")
        if self.label == NEGATIVE and self.toa != 0:
            raise ValueError(f"negative record needs toa = 0, got {self.toa}")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def window_end(self) -> int:
        """Last-exclusive frame index of the evaluation window (toa, or N for negatives)."""
        return self.toa if self.label == POSITIVE else self.n_frames


@dataclass(frozen=True)
class RawFrameSequence:
    """Raw 8-bit RGB frames, shape (N, H, W, 3), with H and W even."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.uint8)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise ValueError(f"frames must have shape (N, H, W, 3), got {frames.shape}")
        n, h, w, _ = frames.shape
        if n < 1:
            raise ValueError("need at least one frame")
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"H and W must be even and >= 2, got H={h}, W={w}")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be positive and finite, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[VideoRecord] = field(default_factory=list)
    test: list[VideoRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.train or not self.test:
            raise ValueError("both train and test must be non-empty")
        train_ids = {r.id for r in self.train}
        test_ids = {r.id for r in self.test}
        if train_ids & test_ids:
            raise ValueError(f"train/test ids overlap: {sorted(train_ids & test_ids)}")


def write_feature_file(record: VideoRecord, sink: BinaryIO) -> int:
    """Serialize a record: magic, version u16 LE, header-length u32 LE, JSON header, float32 LE blob.

    Returns the number of bytes written.
    """
    header = json.dumps(
        {
            "id": record.id,
            "n_frames": record.n_frames,
            "dim": record.dim,
            "fps": record.fps,
            "toa": record.toa,
            "label": record.label,
        },
        separators=(",", ":"),
    ).encode("utf-8")
    blob = np.ascontiguousarray(record.features, dtype="<f4").tobytes()
    written = 0
    written += sink.write(FEATURE_MAGIC)
    written += sink.write(struct.pack("<H", FEATURE_VERSION))
    written += sink.write(struct.pack("<I", len(header)))
    written += sink.write(header)
    written += sink.write(blob)
    return written


def read_feature_file(source: BinaryIO) -> VideoRecord:
    """Inverse of :func:`write_feature_file`; floats round-trip bit-exactly."""
    magic = source.read(4)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    raw = source.read(2)
    if len(raw) != 2:
        raise FeatureFileError("truncated file: missing version")
    (version,) = struct.unpack("<H", raw)
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported version {version}, expected {FEATURE_VERSION}")
    raw = source.read(4)
    if len(raw) != 4:
        raise FeatureFileError("truncated file: missing header length")
    (header_len,) = struct.unpack("<I", raw)
    raw = source.read(header_len)
    if len(raw) != header_len:
        raise FeatureFileError("truncated file: incomplete header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FeatureFileError(f"invalid header JSON: {exc}") from exc
    for key in ("id", "n_frames", "dim", "fps", "toa", "label"):
        if key not in header:
            raise FeatureFileError(f"header missing field {key!r}")
    n, d = int(header["n_frames"]), int(header["dim"])
    blob = source.read()
    if len(blob) != n * d * 4:
        raise FeatureFileError(f"payload is {len(blob)} bytes, header implies {n * d * 4}")
    features = np.frombuffer(blob, dtype="<f4").reshape(n, d)
    try:
        return VideoRecord(
            id=str(header["id"]),
            features=features,
            fps=float(header["fps"]),
            toa=int(header["toa"]),
            label=int(header["label"]),
        )
    except ValueError as exc:
        raise FeatureFileError(f"header/record invariant violation: {exc}") from exc


def save_feature_file(record: VideoRecord, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return write_feature_file(record, fh)


def load_feature_file(path: str | Path) -> VideoRecord:
    with open(path, "rb") as fh:
        return read_feature_file(fh)


def write_manifest(paths: list[str], path: str | Path) -> None:
    """Dataset manifest: a JSON array of feature-file paths."""
    Path(path).write_text(json.dumps([str(p) for p in paths], indent=1) + "\n")


def load_manifest_with_paths(path: str | Path) -> list[tuple[Path, VideoRecord]]:
    manifest_path = Path(path)
    entries = json.loads(manifest_path.read_text())
    if not isinstance(entries, list):
        raise ValueError(f"manifest {path} must be a JSON array of file paths")
    out = []
    for entry in entries:
        p = Path(entry)
        if not p.is_absolute():
            p = manifest_path.parent / p
        out.append((p, load_feature_file(p)))
    return out


def load_manifest(path: str | Path) -> list[VideoRecord]:
    return [record for _, record in load_manifest_with_paths(path)]


def risk_direction(dim: int) -> np.ndarray:
    """Fixed unit direction along which synthetic positives accumulate risk.

    Alternating signs keep the direction off the all-ones axis, which layer
    normalization inside the model projects away.
    """
    u = np.where(np.arange(dim) % 2 == 0, 1.0, -1.0)
    return u / math.sqrt(dim)


def risk_ramp(t: int, toa: int, window: int) -> float:
    """Ramp from 0 at t = toa - window to 1 at t = toa, clamped below at 0."""
    return max(0.0, (t - toa + window) / window)


def generate_synthetic_dataset(
    n_pos: int,
    n_neg: int,
    n_frames: int,
    dim: int,
    fps: float,
    toa: int,
    separability: float,
    seed: int,
    ramp_seconds: float = 2.0,
) -> list[VideoRecord]:
    """Unit-normalized Gaussian frame features; positives drift toward a fixed
    risk direction over the final ~``ramp_seconds`` before ``toa``.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_frames < 1 or n_pos < 0 or n_neg < 0:
        raise ValueError("n_frames must be >= 1 and counts non-negative")
    if n_pos > 0 and not (1 <= toa <= n_frames):
        raise ValueError(f"need 1 <= toa <= n_frames for positives, got toa={toa}")
    if separability < 0:
        raise ValueError("separability must be >= 0")

    rng = np.random.default_rng(seed)
    u = risk_direction(dim)
    window = max(1, math.ceil(math.ceil(fps) * ramp_seconds))
    if toa >= 1:
        window = min(toa, window)

    records = []
    for i in range(n_pos):
        base = rng.standard_normal((n_frames, dim))
        ramp = np.array([risk_ramp(t, toa, window) for t in range(n_frames)])
        feats = base + separability * ramp[:, None] * u[None, :]
        records.append(
            VideoRecord(
                id=f"pos_{i:04d}",
                features=_normalize_rows(feats),
                fps=fps,
                toa=toa,
                label=POSITIVE,
            )
        )
    for i in range(n_neg):
        base = rng.standard_normal((n_frames, dim))
        records.append(
            VideoRecord(
                id=f"neg_{i:04d}",
                features=_normalize_rows(base),
                fps=fps,
                toa=0,
                label=NEGATIVE,
            )
        )
    return records


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (matrix / norms).astype(np.float32)


def generate_synthetic_raw_video(
    n_frames: int,
    height: int,
    width: int,
    fps: float,
    toa: int,
    label: int,
    seed: int,
    amplitude: float = 80.0,
    ramp_seconds: float = 2.0,
) -> RawFrameSequence:
    """Pixel-level counterpart of the feature generator: textured left half,
    black right half; positives brighten the top-left quadrant along the
    risk ramp.

    Keeping the right half black means right-half occlusion is a no-op on
    these clips, which pins down scenarios whose risk signal lives entirely
    in the left half. Brightening only a quadrant (rather than the whole
    textured area) rotates the frame's feature direction, so the signal
    survives the encoder's L2 normalization.
    """
    if height % 2 or width % 2 or height < 4 or width < 4:
        raise ValueError("height and width must be even and >= 4")
    if label == POSITIVE and not (1 <= toa <= n_frames):
        raise ValueError(f"positive clip needs 1 <= toa <= n_frames, got toa={toa}")
    rng = np.random.default_rng(seed)
    window = max(1, math.ceil(math.ceil(fps) * ramp_seconds))
    if toa >= 1:
        window = min(toa, window)
    frames = np.zeros((n_frames, height, width, 3), dtype=np.float64)
    half_w = width // 2
    half_h = height // 2
    frames[:, :, :half_w, :] = rng.normal(100.0, 25.0, size=(n_frames, height, half_w, 3))
    if label == POSITIVE:
        ramp = np.array([risk_ramp(t, toa, window) for t in range(n_frames)])
        frames[:, :half_h, :half_w, :] += amplitude * np.minimum(ramp, 1.0)[:, None, None, None]
    return RawFrameSequence(frames=np.clip(np.floor(frames + 0.5), 0, 255).astype(np.uint8), fps=fps)


def split_dataset(records: list[VideoRecord], test_fraction: float, seed: int) -> DatasetSplit:
    """Label-stratified split, deterministic given the seed."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_label = {POSITIVE: [], NEGATIVE: []}
    for r in records:
        by_label[r.label].append(r)
    if not by_label[POSITIVE] or not by_label[NEGATIVE]:
        raise ValueError("need records of both labels to split")

    total = len(records)
    n_test = int(math.floor(test_fraction * total + 0.5))
    n_test = min(max(n_test, 1), total - 1)

    # Per-class floor allocation, remaining slots by largest fractional
    # remainder (positives first on ties).
    quotas = {}
    remainders = []
    for label in (POSITIVE, NEGATIVE):
        exact = test_fraction * len(by_label[label])
        quotas[label] = int(math.floor(exact))
        remainders.append((exact - quotas[label], label == POSITIVE, label))
    remainders.sort(reverse=True)
    for _, _, label in remainders:
        if sum(quotas.values()) >= n_test:
            break
        quotas[label] += 1

    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in (POSITIVE, NEGATIVE):
        group = sorted(by_label[label], key=lambda r: r.id)
        order = rng.permutation(len(group))
        cut = quotas[label]
        test.extend(group[j] for j in order[:cut])
        train.extend(group[j] for j in order[cut:])
    return DatasetSplit(train=train, test=test)
