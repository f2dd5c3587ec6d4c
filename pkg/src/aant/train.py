"""Training loop: AdamW with a separate high-lr group for the decision
threshold, plateau-halving schedule, seed-deterministic batching, and a
checkpoint format of JSON manifest + float32 feature-file blobs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import VideoRecord, load_feature_file, save_feature_file
from .losses import DEFAULT_MIL_TOP_K, batch_loss
from .model import AnticipationModel

CHECKPOINT_MANIFEST = "manifest.json"


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 10
    lr: float = 1e-3
    threshold_lr: float = 1e-1
    weight_decay: float = 1e-4
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    mil_top_k: int = DEFAULT_MIL_TOP_K
    seed: int = 0
    single_thread: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        for name in ("lr", "threshold_lr", "weight_decay", "scheduler_factor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.scheduler_patience < 1:
            raise ValueError("scheduler_patience must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    l_ce: float
    l_t: float
    l_mil: float
    total: float
    lr: float
    tau: float
    w_ce: float = 1.0
    w_t: float = 1.0
    w_mil: float = 1.0


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)

    @property
    def final_tau(self) -> float:
        return self.history[-1].tau if self.history else 0.0


class PlateauScheduler:
    """Halve all group learning rates after `patience` consecutive epochs
    without strict improvement of the monitored value."""

    def __init__(self, optimizer, factor: float = 0.5, patience: int = 3):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.stagnant = 0

    def step(self, value: float) -> None:
        if value < self.best:
            self.best = value
            self.stagnant = 0
            return
        self.stagnant += 1
        if self.stagnant >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.stagnant = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]


def build_optimizer(model: AnticipationModel, config: TrainConfig) -> torch.optim.AdamW:
    """Weight decay on model weights only; the threshold and the loss-weight
    parameters train undecayed (decay would bias them toward 0)."""
    special = {"threshold", "loss_weight_theta"}
    regular = [p for n, p in model.named_parameters() if n not in special]
    return torch.optim.AdamW(
        [
            {"params": regular, "lr": config.lr, "weight_decay": config.weight_decay},
            {"params": [model.loss_weight_theta], "lr": config.lr, "weight_decay": 0.0},
            {"params": [model.threshold], "lr": config.threshold_lr, "weight_decay": 0.0},
        ]
    )


def train(model: AnticipationModel, records: list[VideoRecord], config: TrainConfig) -> TrainResult:
    if not records:
        raise ValueError("training set must be non-empty")
    if config.single_thread:
        torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    optimizer = build_optimizer(model, config)
    scheduler = PlateauScheduler(optimizer, config.scheduler_factor, config.scheduler_patience)
    result = TrainResult()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(records))
        sums = {"l_ce": 0.0, "l_t": 0.0, "l_mil": 0.0, "total": 0.0}
        n_batches = 0
        last = None
        for start in range(0, len(records), config.batch_size):
            batch = [records[i] for i in order[start : start + config.batch_size]]
            breakdown = batch_loss(model, batch, k=config.mil_top_k)
            if not torch.isfinite(breakdown.total):
                parts = breakdown.floats()
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}: l_ce={parts['l_ce']}, "
                    f"l_t={parts['l_t']}, l_mil={parts['l_mil']}, "
                    f"tau={float(model.threshold.detach())}"
                )
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            last = breakdown.floats()
            for key in sums:
                sums[key] += last[key]
            n_batches += 1

        epoch_total = sums["total"] / n_batches
        result.history.append(
            EpochStats(
                epoch=epoch,
                l_ce=sums["l_ce"] / n_batches,
                l_t=sums["l_t"] / n_batches,
                l_mil=sums["l_mil"] / n_batches,
                total=epoch_total,
                lr=scheduler.lr,
                tau=float(model.threshold.detach()),
                w_ce=last["w_ce"],
                w_t=last["w_t"],
                w_mil=last["w_mil"],
            )
        )
        scheduler.step(epoch_total)
    return result


def write_history_csv(history: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_ce", "l_t", "l_mil", "total", "lr", "tau"])
        for row in history:
            writer.writerow(
                [row.epoch, repr(row.l_ce), repr(row.l_t), repr(row.l_mil), repr(row.total), repr(row.lr), repr(row.tau)]
            )


def save_checkpoint(model: AnticipationModel, out_dir: str | Path) -> Path:
    """One feature-file blob per tensor plus a JSON manifest; float32 state
    round-trips bit-exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(model.state_dict().items()):
        arr = tensor.detach().cpu().numpy().astype(np.float32, copy=False)
        blob_name = f"tensor_{i:03d}.aant"
        record = VideoRecord(
            id=name,
            features=arr.reshape(1, -1) if arr.size else arr.reshape(1, 1),
            fps=1.0,
            toa=0,
            label=0,
        )
        save_feature_file(record, out / blob_name)
        entries.append({"name": name, "file": blob_name, "shape": list(tensor.shape)})
    manifest = {
        "format": "aant-checkpoint",
        "version": 1,
        "model": {
            "feature_dim": model.feature_dim,
            "text_dim": model.text_dim,
            "heads": model.heads,
            "temperature": model.temperature,
        },
        "tensors": entries,
    }
    (out / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return out


def load_checkpoint(checkpoint_dir: str | Path) -> AnticipationModel:
    cp = Path(checkpoint_dir)
    manifest = json.loads((cp / CHECKPOINT_MANIFEST).read_text())
    if manifest.get("format") != "aant-checkpoint" or manifest.get("version") != 1:
        raise ValueError(f"unrecognized checkpoint manifest in {cp}")
    spec = manifest["model"]
    model = AnticipationModel(
        feature_dim=int(spec["feature_dim"]),
        text_dim=int(spec["text_dim"]),
        heads=int(spec["heads"]),
        temperature=float(spec["temperature"]),
    )
    state = {}
    for entry in manifest["tensors"]:
        record = load_feature_file(cp / entry["file"])
        arr = np.array(record.features).reshape(entry["shape"])
        state[entry["name"]] = torch.as_tensor(arr, dtype=torch.float32)
    # Text-embedding buffers may have corpus-dependent shapes; install them
    # before strict state loading.
    model.pos_text_embeddings = state["pos_text_embeddings"]
    model.neg_text_embeddings = state["neg_text_embeddings"]
    model.load_state_dict(state)
    return model
