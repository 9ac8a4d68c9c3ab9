"""Self-describing checkpoint container: config JSON plus named weight arrays."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import SegmentationNet

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(cls, model: SegmentationNet, epoch: int = 0,
                   metrics: dict | None = None) -> "Checkpoint":
        weights = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(config=model.cfg, weights=weights, epoch=epoch, metrics=metrics or {})

    def build_model(self) -> SegmentationNet:
        model = SegmentationNet(self.config)
        state = {k: torch.from_numpy(v) for k, v in self.weights.items()}
        model.load_state_dict(state)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    meta = {
        "version": ckpt.version,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **ckpt.weights)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path}: not a checkpoint (missing metadata entry)")
        meta = json.loads(str(data["__meta__"]))
        if "version" not in meta:
            raise ValueError(f"{path}: checkpoint metadata lacks a version field")
        weights = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return Checkpoint(
        config=ModelConfig.from_dict(meta["config"]),
        weights=weights,
        epoch=int(meta["epoch"]),
        metrics=meta.get("metrics", {}),
        version=int(meta["version"]),
    )
