"""
Weight and checkpoint files. The byte layout is documented in docs/weight-format.md.
"""
from __future__ import annotations

import rtcnet.config
import rtcnet.network
import rtcnet.toolbox

from pathlib import Path
import json
import logging
import struct

import numpy as np

logger = logging.getLogger("rtcnet.network")

MAGIC = b"RTCN"
VERSION = 1
FLAG_OPTIMIZER = 0x1
VELOCITY_PREFIX = "velocity/"
DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

class WeightFileError(ValueError):
    pass

def encode(model: rtcnet.network.Model, velocities: dict = None, meta: dict = None) -> bytes:
    """
    Serialize a model, optionally with the optimizer-state appendix.
    Args:
        model (rtcnet.network.Model): Model to write
        velocities (dict): Momentum buffers keyed like model.params
        meta (dict): Optimizer metadata (epoch, step, ...)
    Returns:
        bytes: File content including the trailing checksum
    """
    dtype = np.dtype(model.dtype).newbyteorder("<")
    tensors = list(model.params.items())
    flags = 0
    if velocities is not None:
        flags |= FLAG_OPTIMIZER
        tensors += [(f"{VELOCITY_PREFIX}{key}", velocities[key]) for key in model.params]

    config_text = rtcnet.config.dumps(rtcnet.config.network_entries(model.config)).encode("utf-8")
    meta_text = json.dumps(meta or {}, sort_keys=True).encode("utf-8") if flags & FLAG_OPTIMIZER else b""

    header = bytearray()
    header += MAGIC
    header += struct.pack("<HHB", VERSION, flags, dtype.itemsize)
    header += struct.pack("<I", len(config_text)) + config_text
    header += struct.pack("<I", len(meta_text)) + meta_text
    header += struct.pack("<I", len(tensors))

    payload = bytearray()
    for name, tensor in tensors:
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<B", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        header += struct.pack("<Q", len(payload))
        payload += np.ascontiguousarray(tensor, dtype=dtype).tobytes()

    body = bytes(header + payload)
    return body + struct.pack("<Q", rtcnet.toolbox.checksum64(body))

def decode(data: bytes) -> tuple[rtcnet.network.Model, dict | None, dict]:
    """
    Parse and validate file content. Nothing is returned unless every check passes.
    Returns:
        tuple: (model, velocities or None, meta)
    """
    if len(data) < len(MAGIC) + 5 + 8 or data[:4] != MAGIC:
        raise WeightFileError("not an rtcnet weight file (bad magic or truncated header)")
    body, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if rtcnet.toolbox.checksum64(body) != stored:
        raise WeightFileError("checksum mismatch: file is truncated or corrupted")

    try:
        version, flags, itemsize = struct.unpack_from("<HHB", body, 4)
        if version != VERSION:
            raise WeightFileError(f"unsupported weight file version {version}, this build reads {VERSION}")
        if itemsize not in DTYPE_CODES:
            raise WeightFileError(f"unknown element size {itemsize}")
        dtype = DTYPE_CODES[itemsize]
        offset = 9

        (length,) = struct.unpack_from("<I", body, offset)
        config_text = body[offset + 4:offset + 4 + length].decode("utf-8")
        offset += 4 + length
        (length,) = struct.unpack_from("<I", body, offset)
        meta_text = body[offset + 4:offset + 4 + length].decode("utf-8")
        offset += 4 + length
        (count,) = struct.unpack_from("<I", body, offset)
        offset += 4

        table = []
        for _ in range(count):
            (length,) = struct.unpack_from("<H", body, offset)
            name = body[offset + 2:offset + 2 + length].decode("utf-8")
            offset += 2 + length
            (ndim,) = struct.unpack_from("<B", body, offset)
            shape = struct.unpack_from(f"<{ndim}I", body, offset + 1)
            offset += 1 + 4 * ndim
            (start,) = struct.unpack_from("<Q", body, offset)
            offset += 8
            table.append((name, shape, start))

        tensors = {}
        for name, shape, start in table:
            size = int(np.prod(shape)) * dtype.itemsize
            chunk = body[offset + start:offset + start + size]
            if len(chunk) != size:
                raise WeightFileError(f"payload for {name} is truncated")
            tensors[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

        config = rtcnet.config.network_config(rtcnet.config.loads(config_text))
        params = {name: tensor for name, tensor in tensors.items() if not name.startswith(VELOCITY_PREFIX)}
        model = rtcnet.network.Model(config, params)
        velocities = None
        if flags & FLAG_OPTIMIZER:
            velocities = {key: tensors[f"{VELOCITY_PREFIX}{key}"] for key in model.params}
        meta = json.loads(meta_text) if meta_text else {}
    except WeightFileError:
        raise
    except (struct.error, UnicodeDecodeError, KeyError, ValueError) as exc:
        raise WeightFileError(f"malformed weight file: {exc}") from None
    return model, velocities, meta

def save_weights(model: rtcnet.network.Model, path: Path) -> None:
    rtcnet.toolbox.atomic_write_bytes(Path(path), encode(model))
    logger.debug(f"saved {model} to {path}")

def load_weights(path: Path) -> rtcnet.network.Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    model, _, _ = decode(path.read_bytes())
    return model

def save_checkpoint(model: rtcnet.network.Model, path: Path, velocities: dict, meta: dict) -> None:
    rtcnet.toolbox.atomic_write_bytes(Path(path), encode(model, velocities, meta))
    logger.info(f"checkpoint written to {path}")

def load_checkpoint(path: Path) -> tuple[rtcnet.network.Model, dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    model, velocities, meta = decode(path.read_bytes())
    if velocities is None:
        raise WeightFileError(f"{path} carries no optimizer state; it is a weight file, not a checkpoint")
    return model, velocities, meta
