"""Binary tensor container for model parameters and latents.

Layout (all little-endian):

    magic[8] = b"RCALCKP1"
    u32 version
    u64 step
    u32 config_len, config bytes (utf-8 canonical experiment config echo)
    u32 tensor count
    per tensor, sorted lexicographically by name:
        u16 name_len, name bytes
        u8 rank, u32 dims[rank]
        float32 payload
    u32 crc32 over everything above

Round trips are bitwise: save(load(save(m))) produces identical files.
Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RCALCKP1"
VERSION = 1


class CheckpointError(Exception):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class UnknownTensorError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class TensorShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    step: int
    config_text: str
    tensors: dict[str, np.ndarray]


def save_tensors(path: Path, named: dict[str, np.ndarray], config_text: str = "",
                 step: int = 0) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", step)]
    cfg = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    names = sorted(named)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(named[name], dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_tensors(path: Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise TruncatedError(f"{path}: file too short")
    if blob[: len(MAGIC)] != MAGIC:
        raise MagicError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise IntegrityError(f"{path}: crc32 mismatch, payload corrupted")

    off = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise TruncatedError(f"{path}: truncated at byte {off}")
        chunk = body[off: off + n]
        off += n
        return chunk

    version = struct.unpack("<I", take(4))[0]
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    step = struct.unpack("<Q", take(8))[0]
    cfg_len = struct.unpack("<I", take(4))[0]
    config_text = take(cfg_len).decode("utf-8")
    count = struct.unpack("<I", take(4))[0]
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", take(2))[0]
        name = take(name_len).decode("utf-8")
        rank = struct.unpack("<B", take(1))[0]
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_items = int(np.prod(dims)) if dims else 1
        payload = take(4 * n_items)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if off != len(body):
        raise TruncatedError(f"{path}: {len(body) - off} trailing bytes")
    return Checkpoint(step=step, config_text=config_text, tensors=tensors)


def save_checkpoint(model, path: Path, config_text: str = "", step: int = 0) -> None:
    named = {name: t.data for name, t in model.named_params()}
    save_tensors(path, named, config_text=config_text, step=step)


def restore_model(model, ckpt: Checkpoint) -> None:
    """Load checkpoint tensors into an existing model, strictly by name."""
    params = dict(model.named_params())
    for name, arr in ckpt.tensors.items():
        if name not in params:
            raise UnknownTensorError(f"checkpoint tensor {name!r} not in model")
        if params[name].data.shape != arr.shape:
            raise TensorShapeError(
                f"tensor {name!r}: checkpoint shape {arr.shape} vs model "
                f"{params[name].data.shape}")
    for name, t in params.items():
        if name not in ckpt.tensors:
            raise MissingTensorError(f"model tensor {name!r} missing from checkpoint")
        t.data = ckpt.tensors[name].astype(np.float32)


def load_checkpoint(path: Path, model=None) -> Checkpoint:
    ckpt = load_tensors(path)
    if model is not None:
        restore_model(model, ckpt)
    return ckpt
