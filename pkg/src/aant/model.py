"""Dual-branch anticipation model: temporal attention over frame features,
report-derived class embeddings, anomaly-focused video prompts, and
frame-vs-class similarity scores, with a learnable decision threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import VideoRecord

DEFAULT_TEMPERATURE = 0.07
DEFAULT_HEADS = 8

# theta with softplus(theta) = 1, so normalized loss weights start at (1, 1, 1)
SOFTPLUS_INV_ONE = math.log(math.e - 1.0)


class TemporalAttention(nn.Module):
    """Multi-head self-attention over frames: layer-norm, per-head scaled
    dot-product, concatenation, output projection. No positional encoding,
    so the block is permutation-equivariant; temporal order enters the
    pipeline through the time-weighted loss instead.
    """

    def __init__(self, dim: int, heads: int = DEFAULT_HEADS):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} must be divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.norm = nn.LayerNorm(dim)
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)
        self.w_o = nn.Linear(dim, dim, bias=False)

    def attention_weights(self, features: torch.Tensor) -> torch.Tensor:
        """Per-head softmax weights, shape (heads, N, N); rows sum to 1."""
        q, k, _ = self._project(features)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)

    def _project(self, features: torch.Tensor):
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ValueError(f"expected (N, {self.dim}) features, got {tuple(features.shape)}")
        x = self.norm(features)
        n = x.shape[0]

        def split(t):
            return t.view(n, self.heads, self.head_dim).transpose(0, 1)  # (h, N, dk)

        return split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        q, k, v = self._project(features)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = weights @ v  # (h, N, dk)
        out = out.transpose(0, 1).reshape(features.shape[0], self.dim)
        return self.w_o(out)


class PromptFFN(nn.Module):
    """Two affine layers around a smooth nonlinearity, hidden width = dim."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def adjust_logits(logits: torch.Tensor, threshold: torch.Tensor | float) -> torch.Tensor:
    """Subtract the learnable threshold from the positive-class logit."""
    if logits.shape[-1] != 2:
        raise ValueError(f"expected logit pairs, got shape {tuple(logits.shape)}")
    thr = threshold if torch.is_tensor(threshold) else torch.as_tensor(threshold, dtype=logits.dtype)
    return torch.stack([logits[..., 0], logits[..., 1] - thr], dim=-1)


def video_prompt(logits: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """Per-class frame-softmax weighting of features, L2-normalized: (C, D)."""
    if logits.shape[0] != features.shape[0]:
        raise ValueError(
            f"logits ({tuple(logits.shape)}) and features ({tuple(features.shape)}) disagree on N"
        )
    weights = torch.softmax(logits, dim=0)  # (N, C), per-class over frames
    return F.normalize(weights.transpose(0, 1) @ features, dim=1)


def instance_class_embedding(
    v_attn: torch.Tensor, class_matrix: torch.Tensor, ffn: PromptFFN
) -> torch.Tensor:
    if v_attn.shape != class_matrix.shape:
        raise ValueError(f"prompt {tuple(v_attn.shape)} vs classes {tuple(class_matrix.shape)}")
    return ffn(v_attn + class_matrix) + class_matrix


def similarity_scores(
    features: torch.Tensor,
    instance: torch.Tensor,
    refine: nn.Linear,
    temperature: float = DEFAULT_TEMPERATURE,
) -> torch.Tensor:
    """Cosine similarity of frames against refined class rows, scaled: (N, C)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    refined = F.normalize(instance + refine(instance), dim=1)
    frames = F.normalize(features, dim=1)
    return frames @ refined.transpose(0, 1) / temperature


@dataclass
class ForwardTensors:
    """Differentiable per-video outputs (torch)."""

    logits: torch.Tensor  # (N, 2) raw classifier logits
    adjusted: torch.Tensor  # (N, 2) threshold-adjusted logits
    probs: torch.Tensor  # (N,) accident probability after adjustment
    scores: torch.Tensor  # (N, 2) similarity scores
    class_matrix: torch.Tensor  # (2, D)


@dataclass(frozen=True)
class AnticipationOutput:
    """Evaluation-facing per-video outputs (numpy)."""

    logits: np.ndarray
    probs: np.ndarray
    scores: np.ndarray
    video_score: float
    temperature: float

    def __post_init__(self):
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")


class AnticipationModel(nn.Module):
    """End-to-end model; all trainable state lives here, including the
    decision threshold and the three loss weights."""

    def __init__(
        self,
        feature_dim: int,
        text_dim: int = 768,
        heads: int = DEFAULT_HEADS,
        temperature: float = DEFAULT_TEMPERATURE,
        seed: int = 0,
    ):
        super().__init__()
        self.feature_dim = feature_dim
        self.text_dim = text_dim
        self.temperature = temperature
        self.attention = TemporalAttention(feature_dim, heads)
        self.classifier = nn.Linear(feature_dim, 2)
        self.text_projection = nn.Linear(text_dim, feature_dim, bias=False)
        self.prompt_ffn = PromptFFN(feature_dim)
        self.refine = nn.Linear(feature_dim, feature_dim)
        self.threshold = nn.Parameter(torch.zeros(()))
        self.loss_weight_theta = nn.Parameter(torch.full((3,), SOFTPLUS_INV_ONE))
        self.register_buffer("pos_text_embeddings", torch.zeros(1, text_dim))
        self.register_buffer("neg_text_embeddings", torch.zeros(1, text_dim))
        self._reset_parameters(seed)

    def _reset_parameters(self, seed: int) -> None:
        # Scaled-normal weights from a local generator: init is a function of
        # the seed alone, never of global RNG state.
        gen = torch.Generator().manual_seed(seed)
        for name, param in self.named_parameters():
            if name in ("threshold", "loss_weight_theta"):
                continue
            if param.ndim >= 2:
                fan_in = param.shape[1]
                with torch.no_grad():
                    param.copy_(torch.randn(param.shape, generator=gen) / math.sqrt(fan_in))
            elif name.endswith(".bias"):
                nn.init.zeros_(param)
        with torch.no_grad():
            self.attention.norm.weight.fill_(1.0)
            self.attention.norm.bias.zero_()
            self.threshold.zero_()
            self.loss_weight_theta.fill_(SOFTPLUS_INV_ONE)

    @property
    def heads(self) -> int:
        return self.attention.heads

    def set_class_texts(self, pos_embeddings: np.ndarray, neg_embeddings: np.ndarray) -> None:
        """Install L2-normalized text embeddings (rows) for each class."""
        for name, arr in (("pos", pos_embeddings), ("neg", neg_embeddings)):
            arr = np.asarray(arr)
            if arr.ndim != 2 or arr.shape[1] != self.text_dim or arr.shape[0] < 1:
                raise ValueError(f"{name} embeddings must be (n, {self.text_dim}), got {arr.shape}")
        dtype = self.text_projection.weight.dtype
        self.pos_text_embeddings = torch.as_tensor(pos_embeddings, dtype=dtype)
        self.neg_text_embeddings = torch.as_tensor(neg_embeddings, dtype=dtype)

    def class_matrix(self) -> torch.Tensor:
        """Project per-text embeddings and max-pool per class: (2, D), row 0 negative."""
        neg = self.text_projection(self.neg_text_embeddings).max(dim=0).values
        pos = self.text_projection(self.pos_text_embeddings).max(dim=0).values
        return torch.stack([neg, pos])

    def loss_weights(self) -> torch.Tensor:
        """Positive weights summing to 3; (1, 1, 1) at initialization."""
        sp = F.softplus(self.loss_weight_theta)
        return 3.0 * sp / sp.sum()

    def forward(self, features: torch.Tensor, tau: torch.Tensor | float | None = None) -> ForwardTensors:
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ValueError(f"expected (N, {self.feature_dim}) features, got {tuple(features.shape)}")
        x_cls = self.class_matrix()
        logits = self.classifier(self.attention(features))
        adjusted = adjust_logits(logits, self.threshold if tau is None else tau)
        probs = torch.softmax(adjusted, dim=1)[:, 1]
        v_attn = video_prompt(logits, features)
        instance = instance_class_embedding(v_attn, x_cls, self.prompt_ffn)
        scores = similarity_scores(features, instance, self.refine, self.temperature)
        return ForwardTensors(
            logits=logits, adjusted=adjusted, probs=probs, scores=scores, class_matrix=x_cls
        )


def features_tensor(record: VideoRecord, dtype: torch.dtype) -> torch.Tensor:
    # records hold read-only arrays; copy at the torch boundary
    return torch.as_tensor(np.array(record.features), dtype=dtype)


def full_forward(
    model: AnticipationModel, record: VideoRecord, tau: float | None = None
) -> AnticipationOutput:
    """Inference pass over one record; the video score is the peak accident
    probability inside the evaluation window (pre-accident frames for
    positives, the whole video for negatives)."""
    if record.dim != model.feature_dim:
        raise ValueError(f"record dim {record.dim} != model feature dim {model.feature_dim}")
    dtype = model.classifier.weight.dtype
    with torch.no_grad():
        out = model(features_tensor(record, dtype), tau=tau)
    probs = out.probs.numpy()
    window = record.window_end()
    return AnticipationOutput(
        logits=out.logits.numpy(),
        probs=probs,
        scores=out.scores.numpy(),
        video_score=float(probs[:window].max()),
        temperature=model.temperature,
    )
