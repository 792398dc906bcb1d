"""Versioned binary checkpoint container shared by all trainers.

Layout: 4-byte magic, 1-byte format version, 4-byte big-endian header
length, UTF-8 JSON header (kind, dims, config echo), then the serialized
parameter payload.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

MAGIC = b"VCCK"
VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for unreadable or mismatched checkpoint files."""


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    config: dict[str, Any]
    state: dict[str, torch.Tensor]


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: dict[str, Any],
    state: dict[str, torch.Tensor],
) -> None:
    header = json.dumps(
        {"kind": kind, "config": config, "torch": torch.__version__},
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    payload = io.BytesIO()
    torch.save(state, payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">B", VERSION))
        fh.write(struct.pack(">I", len(header)))
        fh.write(header)
        fh.write(payload.getvalue())


def load_checkpoint(path: str | Path, expected_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack(">B", fh.read(1))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack(">I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        state = torch.load(fh, weights_only=True)
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(
            f"{path}: expected a {expected_kind!r} checkpoint, found {kind!r}"
        )
    return Checkpoint(kind=kind, config=header.get("config", {}), state=state)
