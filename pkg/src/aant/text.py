"""Text branch: deterministic mock encoder and class-embedding construction.

The mock encoder stands in for a heavyweight long-text model. It is a pure
function of (text, seed): token vectors come from a counter-based stream
(FNV-1a token hash XOR seed feeding SplitMix64, uniforms mapped to normals via
Box-Muller), and a sentence embedding is the L2-normalized bag-of-words sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import load_feature_file

DEFAULT_TEXT_DIM = 768

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


class SplitMix64:
    """Counter-based 64-bit generator; bit-stable across platforms."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        # 53 high bits -> [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def _normal_stream(gen: SplitMix64, count: int) -> list[float]:
    """Box-Muller pairs from consecutive uniforms."""
    out = []
    while len(out) < count:
        u1 = gen.next_unit()
        u2 = gen.next_unit()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        out.append(r * math.cos(2.0 * math.pi * u2))
        out.append(r * math.sin(2.0 * math.pi * u2))
    return out[:count]


def token_vector(token: str, seed: int, dimension: int) -> np.ndarray:
    gen = SplitMix64(fnv1a_64(token.encode("utf-8")) ^ (seed & _MASK64))
    return np.array(_normal_stream(gen, dimension), dtype=np.float64)


def mock_encode(text: str, seed: int, dimension: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """Bag-of-words embedding: L2-normalized sum of deterministic token vectors."""
    tokens = text.lower().split()
    if not tokens:
        raise ValueError("cannot encode empty text")
    total = np.zeros(dimension, dtype=np.float64)
    for tok in tokens:
        total += token_vector(tok, seed, dimension)
    norm = float(np.linalg.norm(total))
    if norm > 0:
        total /= norm
    return total


class TextEncoder(Protocol):
    dimension: int

    def encode(self, text: str) -> np.ndarray: ...


class MockTextEncoder:
    """Deterministic stand-in encoder with a per-token cache."""

    def __init__(self, dimension: int = DEFAULT_TEXT_DIM, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def encode(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            raise ValueError("cannot encode empty text")
        total = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokens:
            vec = self._token_cache.get(tok)
            if vec is None:
                vec = token_vector(tok, self.seed, self.dimension)
                self._token_cache[tok] = vec
            total += vec
        norm = float(np.linalg.norm(total))
        if norm > 0:
            total /= norm
        return total


class PrecomputedTextEncoder:
    """Encoder backed by a feature file whose rows align with a text list."""

    def __init__(self, embeddings: np.ndarray, texts: list[str]):
        if embeddings.shape[0] != len(texts):
            raise ValueError(
                f"embedding file holds {embeddings.shape[0]} rows but {len(texts)} texts were given"
            )
        self.dimension = embeddings.shape[1]
        self._table = {text: np.asarray(row, dtype=np.float64) for text, row in zip(texts, embeddings)}

    @classmethod
    def from_feature_file(cls, path: str | Path, texts: list[str]) -> "PrecomputedTextEncoder":
        record = load_feature_file(path)
        return cls(np.asarray(record.features, dtype=np.float64), texts)

    def encode(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise KeyError(f"no precomputed embedding for text: {text[:60]!r}...") from None


@dataclass(frozen=True)
class ClassEmbeddings:
    """Row 0 = non-accident class vector, row 1 = accident class vector."""

    matrix: np.ndarray  # (2, D)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape[0] != 2 or matrix.ndim != 2:
            raise ValueError(f"class matrix must be (2, D), got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("class matrix must be finite")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def negative(self) -> np.ndarray:
        return self.matrix[0]

    @property
    def positive(self) -> np.ndarray:
        return self.matrix[1]


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 0 else vector


def init_projection(text_dim: int, feature_dim: int, seed: int) -> np.ndarray:
    """Scaled-normal init for the trainable text-to-feature projection."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / math.sqrt(text_dim), size=(text_dim, feature_dim))


def project_to_d(embedding: np.ndarray, projection: np.ndarray) -> np.ndarray:
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 1 or projection.ndim != 2 or embedding.shape[0] != projection.shape[0]:
        raise ValueError(
            f"shape mismatch: embedding {embedding.shape} vs projection {projection.shape}"
        )
    return embedding @ projection


def build_class_embeddings(
    pos_texts: list[str],
    neg_texts: list[str],
    encoder: TextEncoder,
    projection: np.ndarray,
) -> ClassEmbeddings:
    """Encode, L2-normalize, and project each text, then max-pool per class."""
    if not pos_texts or not neg_texts:
        raise ValueError("both class text lists must be non-empty")

    def pool(texts: list[str]) -> np.ndarray:
        rows = np.stack([project_to_d(l2_normalize(encoder.encode(t)), projection) for t in texts])
        return rows.max(axis=0)

    return ClassEmbeddings(matrix=np.stack([pool(neg_texts), pool(pos_texts)]))
