"""Training losses: video-level CE on max-pooled logits, time-weighted
frame CE with an exponential earliness penalty, top-k multiple-instance
loss on similarity scores, learnable loss weights, and the decision
threshold's calibration gradient (closed form, used as a test oracle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import POSITIVE
from .model import AnticipationModel, features_tensor

DEFAULT_MIL_TOP_K = 20


def ce(logit_pair, cls: int) -> torch.Tensor:
    """Cross-entropy of a softmax over a logit pair: -log softmax(pair)[cls]."""
    pair = torch.as_tensor(logit_pair)
    if pair.is_floating_point() is False:
        pair = pair.double()
    return -F.log_softmax(pair, dim=-1)[..., cls]


def time_penalty(t: int, toa: int, fps: float) -> float:
    """Non-positive earliness penalty; 0 from frame toa-1 onward."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return -max(0.0, (toa - t - 1) / fps)


def frame_time_weights(n_frames: int, toa: int, fps: float, dtype=torch.float32) -> torch.Tensor:
    """exp(penalty) per frame; all ones for toa = 0 (negative videos)."""
    return torch.tensor(
        [math.exp(time_penalty(t, toa, fps)) for t in range(n_frames)], dtype=dtype
    )


def loss_ce(adjusted_logits: torch.Tensor, label: int, toa: int) -> torch.Tensor:
    """Video-level CE: per-class max over the pre-accident window (all frames
    for negatives), then cross-entropy against the video label."""
    n = adjusted_logits.shape[0]
    if label == POSITIVE:
        if toa < 1:
            raise ValueError("positive video requires toa >= 1")
        window = min(toa, n)
    else:
        window = n
    pooled = adjusted_logits[:window].max(dim=0).values
    return ce(pooled, label)


def loss_frame(adjusted_logits: torch.Tensor, label: int, toa: int, fps: float) -> torch.Tensor:
    """Frame-level CE, exponentially down-weighted with distance to the
    accident for positives, uniform for negatives; normalized by N."""
    n = adjusted_logits.shape[0]
    weights = frame_time_weights(n, toa if label == POSITIVE else 0, fps, adjusted_logits.dtype)
    frame_ce = ce(adjusted_logits, label)
    return (weights * frame_ce).sum() / n


def mil_instance_logits(scores: torch.Tensor, k: int = DEFAULT_MIL_TOP_K) -> torch.Tensor:
    """Per-class mean of the top-k frame similarity scores (k clamped to N)."""
    k_eff = min(k, scores.shape[0])
    return torch.topk(scores, k_eff, dim=0).values.mean(dim=0)


def loss_mil(scores: torch.Tensor, label: int, k: int = DEFAULT_MIL_TOP_K) -> torch.Tensor:
    """CE on the top-k instance logits against the video label."""
    return ce(mil_instance_logits(scores, k), label)


@dataclass
class LossBreakdown:
    l_ce: torch.Tensor
    l_t: torch.Tensor
    l_mil: torch.Tensor
    weights: torch.Tensor  # (3,), positive, sums to 3
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_ce": float(self.l_ce.detach()),
            "l_t": float(self.l_t.detach()),
            "l_mil": float(self.l_mil.detach()),
            "total": float(self.total.detach()),
            "w_ce": float(self.weights[0].detach()),
            "w_t": float(self.weights[1].detach()),
            "w_mil": float(self.weights[2].detach()),
        }


def loss_weights_from_theta(theta: torch.Tensor) -> torch.Tensor:
    """Softplus reparameterization normalized to sum to 3, so weights stay
    positive and cannot collapse to zero jointly."""
    sp = F.softplus(theta)
    return 3.0 * sp / sp.sum()


def total_loss(l_ce_val, l_t_val, l_mil_val, theta: torch.Tensor) -> LossBreakdown:
    weights = loss_weights_from_theta(theta)
    parts = [torch.as_tensor(v, dtype=weights.dtype) for v in (l_ce_val, l_t_val, l_mil_val)]
    total = weights[0] * parts[0] + weights[1] * parts[1] + weights[2] * parts[2]
    return LossBreakdown(l_ce=parts[0], l_t=parts[1], l_mil=parts[2], weights=weights, total=total)


def batch_loss(model: AnticipationModel, records, k: int = DEFAULT_MIL_TOP_K) -> LossBreakdown:
    """Composite loss over a batch: video CE summed, frame and MIL losses
    averaged over the batch."""
    if not records:
        raise ValueError("batch must be non-empty")
    dtype = model.classifier.weight.dtype
    ce_sum = torch.zeros((), dtype=dtype)
    frame_sum = torch.zeros((), dtype=dtype)
    mil_sum = torch.zeros((), dtype=dtype)
    for record in records:
        out = model(features_tensor(record, dtype))
        ce_sum = ce_sum + loss_ce(out.adjusted, record.label, record.toa)
        frame_sum = frame_sum + loss_frame(out.adjusted, record.label, record.toa, record.fps)
        mil_sum = mil_sum + loss_mil(out.scores, record.label, k)
    b = len(records)
    return total_loss(ce_sum, frame_sum / b, mil_sum / b, model.loss_weight_theta)


def adjusted_probability(logits: np.ndarray, tau: float) -> np.ndarray:
    """p = sigmoid(z1 - z0 - tau), the threshold-adjusted accident probability."""
    logits = np.asarray(logits, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-(logits[..., 1] - logits[..., 0] - tau)))


def calibration_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy of adjusted probabilities against labels."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def threshold_gradient(probs: np.ndarray, labels: np.ndarray) -> float:
    """Closed-form d(calibration_loss)/d(tau) = mean(y - p).

    A descent step tau <- tau - lr * g therefore raises tau when the model is
    over-confident (p > y) and lowers it when under-confident.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return float(np.mean(y - p))
