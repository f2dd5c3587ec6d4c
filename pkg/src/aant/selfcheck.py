"""Built-in oracle battery behind the `selfcheck` CLI command: quick,
dependency-free recomputations of hand values and brute-force baselines
against the shipped implementations.
"""

from __future__ import annotations

import io
import math

import numpy as np
import torch

from . import losses, metrics, perturb, text
from .alerts import MockLanguageModelClient, PredictionSummary, SceneSummary, generate_alert
from .data import VideoRecord, read_feature_file, write_feature_file
from .encoders import mock_encode_frames
from .data import RawFrameSequence


def _brute_force_ap(scores, labels) -> float:
    pairs = sorted(zip(scores, labels), reverse=True)
    n_pos = sum(labels)
    ap = 0.0
    prev_recall = 0.0
    for threshold in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in pairs if s >= threshold and y == 1)
        fp = sum(1 for s, y in pairs if s >= threshold and y == 0)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def run_selfcheck() -> list[tuple[str, bool, str]]:
    results = []

    def check(name: str, passed: bool, detail: str = "") -> None:
        results.append((name, bool(passed), detail))

    # hand-computed loss values
    v = float(losses.ce(torch.tensor([0.0, 3.0], dtype=torch.float64), 1))
    check("ce (0,3) class 1", abs(v - math.log(1 + math.exp(-3))) < 1e-9, f"{v:.6f}")
    check("time penalty t=0 toa=90 fps=20", losses.time_penalty(0, 90, 20) == -4.45)
    scores = torch.tensor([[0.0, 3.0], [0.0, 2.0], [0.0, 1.0]], dtype=torch.float64)
    mil = float(losses.loss_mil(scores, 1, k=2))
    check("MIL top-2 mean of [3,2,1]", abs(mil - math.log(1 + math.exp(-2.5))) < 1e-9, f"{mil:.6f}")
    theta = torch.full((3,), math.log(math.e - 1))
    w = losses.loss_weights_from_theta(theta)
    check("loss weights (1,1,1) at init", bool(torch.all(w == 1.0)), str(w.tolist()))

    # AP against brute-force threshold enumeration
    rng = np.random.default_rng(11)
    ap_ok = True
    for _ in range(25):
        n = int(rng.integers(3, 12))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        s = np.round(rng.random(n), 2)
        got = metrics.average_precision(metrics.pr_curve(s, labels))
        want = _brute_force_ap(list(s), list(labels))
        if abs(got - want) > 1e-9:
            ap_ok = False
            break
    check("AP equals brute-force enumeration", ap_ok)

    # feature file round trip
    record = VideoRecord(
        id="selfcheck",
        features=rng.standard_normal((7, 5)).astype(np.float32),
        fps=20.0,
        toa=4,
        label=1,
    )
    buf = io.BytesIO()
    write_feature_file(record, buf)
    buf.seek(0)
    loaded = read_feature_file(buf)
    check(
        "feature file round trip bit-exact",
        loaded.features.tobytes() == record.features.tobytes() and loaded.toa == record.toa,
    )

    # mock encoders deterministic
    a = text.mock_encode("a quick brown fox", seed=3, dimension=64)
    b = text.mock_encode("a quick brown fox", seed=3, dimension=64)
    check("mock text encoder deterministic", a.tobytes() == b.tobytes())
    frames = RawFrameSequence(frames=rng.integers(0, 256, (3, 8, 8, 3), dtype=np.uint8), fps=10.0)
    fa = mock_encode_frames(frames, dim=6, seed=5)
    fb = mock_encode_frames(frames, dim=6, seed=5)
    check("mock frame encoder deterministic", fa.tobytes() == fb.tobytes())

    # threshold gradient vs finite differences of the calibration loss
    logits = rng.standard_normal((8, 2))
    y = rng.integers(0, 2, 8)
    tau = 0.37
    grad = losses.threshold_gradient(losses.adjusted_probability(logits, tau), y)
    h = 1e-6
    fd = (
        losses.calibration_loss(losses.adjusted_probability(logits, tau + h), y)
        - losses.calibration_loss(losses.adjusted_probability(logits, tau - h), y)
    ) / (2 * h)
    check("threshold gradient matches finite differences", abs(grad - fd) < 1e-4, f"{grad:.6f} vs {fd:.6f}")
    over_conf = losses.threshold_gradient(np.full(4, 0.9), np.zeros(4))
    check("over-confident batch raises threshold under descent", over_conf < 0)

    # perturbations
    raw = RawFrameSequence(frames=rng.integers(0, 256, (4, 8, 8, 3), dtype=np.uint8), fps=10.0)
    occluded = perturb.occlude_right_half(raw)
    check(
        "occlusion zeroes right half only",
        bool(np.all(occluded.frames[:, :, 4:, :] == 0))
        and occluded.frames[:, :, :4, :].tobytes() == raw.frames[:, :, :4, :].tobytes(),
    )
    noisy1 = perturb.add_gaussian_noise(raw, seed=9)
    noisy2 = perturb.add_gaussian_noise(raw, seed=9)
    check("noise deterministic per seed", noisy1.frames.tobytes() == noisy2.frames.tobytes())

    # legality gate: an illegal completion must never escape
    client = MockLanguageModelClient(forced_response="Just accelerate through the intersection.")
    alert = generate_alert(client, "frame-0", PredictionSummary(video_score=0.9), SceneSummary())
    check("illegal completion replaced by safe fallback", alert.legality.passed and alert.fallback_used)

    return results
