"""Named-tensor checkpoints in the EGTW container."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import container


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict
    step: int = 0
    stage: str = ""
    provenance: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def state_dict(self, prefix: str = "") -> dict[str, torch.Tensor]:
        n = len(prefix)
        return {k[n:]: torch.from_numpy(v.copy()) for k, v in self.tensors.items() if k.startswith(prefix)}

    def tensor_hash(self, names=None) -> str:
        h = hashlib.sha256()
        for k in sorted(names if names is not None else self.tensors):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k]).tobytes())
        return h.hexdigest()


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = {
        "kind": "checkpoint",
        "config": ckpt.config,
        "step": ckpt.step,
        "stage": ckpt.stage,
        "provenance": list(ckpt.provenance),
        "extra": ckpt.extra,
    }
    container.write_container(path, sorted(ckpt.tensors.items()), meta)


def load_checkpoint(path: str | Path) -> Checkpoint:
    tensors, meta = container.read_container(path)
    if meta.get("kind") != "checkpoint":
        raise container.FormatError(f"{path} is not a checkpoint")
    return Checkpoint(tensors, meta["config"], meta["step"], meta["stage"], meta["provenance"], meta.get("extra", {}))
