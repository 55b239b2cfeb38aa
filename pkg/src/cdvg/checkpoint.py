"""Checkpoint files.

Layout: an 8-byte little-endian manifest length, the UTF-8 JSON manifest,
zero padding to a 64-byte boundary, then the payload. Every tensor is stored
as little-endian float32 starting at a 64-byte aligned payload offset.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .errors import ContractViolation
from .model import GroundingModel

FORMAT_VERSION = 1
ALIGN = 64
_DTYPE = np.dtype("<f4")


def _pad(n: int) -> int:
    return -n % ALIGN


def _entries(model: GroundingModel):
    for name, p in model.named_parameters():
        yield name, "param", p.data
    for name, buf in model.named_buffers():
        yield name, "buffer", buf


def checkpoint_bytes(model: GroundingModel, config: RunConfig, step: int = 0) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, kind, arr in _entries(model):
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        tensors.append({"name": name, "kind": kind, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw + b"\0" * _pad(len(raw)))
        offset += len(raw) + _pad(len(raw))
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "step": int(step),
        "tensors": tensors,
        "running_stats": [t["name"] for t in tensors if t["kind"] == "buffer"],
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = struct.pack("<Q", len(head)) + head
    return prefix + b"\0" * _pad(len(prefix)) + b"".join(chunks)


def save_checkpoint(path: str | Path, model: GroundingModel, config: RunConfig, step: int = 0) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model, config, step))
    return path


def read_manifest(blob: bytes) -> tuple[dict, int]:
    if len(blob) < 8:
        raise ContractViolation("checkpoint is truncated")
    (n,) = struct.unpack("<Q", blob[:8])
    try:
        manifest = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractViolation(f"checkpoint manifest is unreadable: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ContractViolation(f"checkpoint format version {version!r} != supported {FORMAT_VERSION}")
    return manifest, 8 + n + _pad(8 + n)


def load_checkpoint(path: str | Path) -> tuple[GroundingModel, RunConfig, dict]:
    """Rebuild the model from the stored config and fill in every tensor."""
    blob = Path(path).read_bytes()
    manifest, base = read_manifest(blob)
    config = parse_config(manifest["config"])
    model = GroundingModel(config.model_config_(), seed=config.seed)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        start = base + t["offset"]
        if start + count * 4 > len(blob):
            raise ContractViolation(f"tensor {t['name']} runs past the end of the checkpoint")
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=start).astype(np.float64).reshape(t["shape"])
        if t["kind"] == "param":
            if t["name"] not in params or params[t["name"]].data.shape != arr.shape:
                raise ContractViolation(f"checkpoint tensor {t['name']} does not fit the model")
            params[t["name"]].data = arr
        else:
            if t["name"] not in buffers:
                raise ContractViolation(f"unknown running statistic {t['name']}")
            model.set_buffer(t["name"], arr)
    model.eval()
    return model, config, manifest
