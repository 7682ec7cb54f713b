"""Grouped model parameters, AdamW with per-group freezing, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .autograd import Tensor

GROUPS = ("molecular_encoder", "spectral_encoder", "fusion", "decoder")
CHECKPOINT_MAGIC = b"SPRCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.weight_decay < 1:
            raise ValueError("weight_decay must lie in [0, 1)")


class ModelParams:
    """Named parameter groups with freeze flags and AdamW state."""

    def __init__(self):
        self.groups: dict[str, dict[str, Tensor]] = {}
        self.frozen: dict[str, bool] = {}
        self.state: dict[tuple[str, str], dict] = {}

    def add_group(self, group: str, tensors: dict[str, Tensor], frozen: bool = False) -> None:
        if group in self.groups:
            raise KeyError(f"group {group!r} already present")
        for t in tensors.values():
            t.requires_grad = not frozen
        self.groups[group] = dict(tensors)
        self.frozen[group] = frozen

    def __getitem__(self, group: str) -> dict[str, Tensor]:
        return self.groups[group]

    def __contains__(self, group: str) -> bool:
        return group in self.groups

    def set_frozen(self, group: str, frozen: bool = True) -> None:
        self.frozen[group] = frozen
        for t in self.groups[group].values():
            t.requires_grad = not frozen
            if frozen:
                t.grad = None

    def named(self, group: str | None = None) -> Iterator[tuple[str, str, Tensor]]:
        for g in self.groups if group is None else [group]:
            for name in sorted(self.groups[g]):
                yield g, name, self.groups[g][name]

    def zero_grad(self) -> None:
        for _, _, t in self.named():
            t.grad = None

    def drop_group(self, group: str) -> None:
        del self.groups[group], self.frozen[group]
        self.state = {k: v for k, v in self.state.items() if k[0] != group}

    def reset_optimizer(self) -> None:
        self.state.clear()

    def discard_frozen_grads(self) -> None:
        for g, frozen in self.frozen.items():
            if frozen:
                for t in self.groups[g].values():
                    t.grad = None

    def checksum(self, group: str) -> str:
        h = hashlib.sha256()
        for _, name, t in self.named(group):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def count(self, group: str | None = None) -> int:
        return sum(t.size for _, _, t in self.named(group))

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for g, tensors in self.groups.items():
            out.add_group(g, {k: Tensor(v.data.copy()) for k, v in tensors.items()}, self.frozen[g])
        return out

    def merge(self, other: "ModelParams", groups) -> None:
        """Take `groups` from another parameter set (replacing any present)."""
        for g in groups:
            self.groups.pop(g, None)
            self.add_group(g, other.groups[g], other.frozen[g])


def adamw_step(params: ModelParams, config: OptimizerConfig) -> None:
    """Decoupled weight decay Adam update; frozen groups are never touched."""
    b1, b2 = config.beta1, config.beta2
    for group, name, t in params.named():
        if params.frozen[group] or t.grad is None:
            continue
        st = params.state.setdefault((group, name), {
            "m": np.zeros_like(t.data), "v": np.zeros_like(t.data), "step": 0,
        })
        st["step"] += 1
        g = t.grad
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        m_hat = st["m"] / (1 - b1 ** st["step"])
        v_hat = st["v"] / (1 - b2 ** st["step"])
        t.data = t.data * (1 - config.learning_rate * config.weight_decay)
        t.data = t.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


# ---------------------------------------------------------------------------
# checkpoint container:
#   magic (8 bytes) | manifest length (uint64 LE) | manifest JSON | f8 LE blobs


def save_checkpoint(path, params: ModelParams, seed: int | None = None,
                    config: dict | None = None) -> dict:
    entries = []
    blobs = []
    for group, name, t in params.named():
        entries.append({"group": group, "name": name, "shape": list(t.shape)})
        blobs.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "groups": list(params.groups),
        "frozen": {g: params.frozen[g] for g in params.groups},
        "checksums": {g: params.checksum(g) for g in params.groups},
        "seed": seed,
        "config": config or {},
        "parameters": entries,
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    payload = CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)
    atomic_write_bytes(path, payload)
    return manifest


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (size,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + size])
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    offset = 16 + size
    grouped: dict[str, dict[str, Tensor]] = {g: {} for g in manifest["groups"]}
    for entry in manifest["parameters"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        grouped[entry["group"]][entry["name"]] = Tensor(arr.reshape(entry["shape"]))
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    params = ModelParams()
    for g in manifest["groups"]:
        params.add_group(g, grouped[g], manifest["frozen"][g])
    return params, manifest


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        # mkstemp creates 0600; match what a plain open() would give
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def config_dict(cfg) -> dict:
    return asdict(cfg)
