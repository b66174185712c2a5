"""Versioned named-array archive with a JSON manifest.

A fixed binary layout (no timestamps, arrays sorted by name) keeps archives
byte-identical across save -> load -> save round trips.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"VWARCH\x00"
FORMAT_VERSION = 1


def save_archive(path: Path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    blob = json.dumps(manifest, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(blob)), blob]
    out.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        name_b = name.encode()
        dtype_b = arr.dtype.str.encode()
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", len(dtype_b)))
        out.append(dtype_b)
        out.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            out.append(struct.pack("<Q", dim))
        raw = arr.tobytes()
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(out))


def load_archive(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint archive")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported archive version {version}")
    (manifest_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    manifest = json.loads(data[off : off + manifest_len])
    off += manifest_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode()
        off += name_len
        (dtype_len,) = struct.unpack_from("<I", data, off)
        off += 4
        dtype = np.dtype(data[off : off + dtype_len].decode())
        off += dtype_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off) if ndim else ()
        off += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", data, off)
        off += 8
        arrays[name] = np.frombuffer(data[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    return arrays, manifest


def model_arrays(model: torch.nn.Module, prefix: str = "model.") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_model_arrays(
    model: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str = "model."
) -> None:
    state = {
        k[len(prefix) :]: torch.from_numpy(np.ascontiguousarray(v)).clone()
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
    model.load_state_dict(state)


def optimizer_arrays(optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    state = optimizer.state_dict()["state"]
    for param_id, entries in state.items():
        for key, value in entries.items():
            if isinstance(value, torch.Tensor):
                out[f"opt.{param_id}.{key}"] = value.detach().cpu().numpy()
            else:
                out[f"opt.{param_id}.{key}"] = np.asarray(value)
    return out


def load_optimizer_arrays(
    optimizer: torch.optim.Optimizer, arrays: dict[str, np.ndarray]
) -> None:
    state_dict = optimizer.state_dict()
    state: dict[int, dict] = {}
    for name, value in arrays.items():
        if not name.startswith("opt."):
            continue
        _, param_id, key = name.split(".", 2)
        entry = state.setdefault(int(param_id), {})
        if key == "step":
            entry[key] = torch.from_numpy(np.ascontiguousarray(value)).clone()
        else:
            entry[key] = torch.from_numpy(np.ascontiguousarray(value)).clone()
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)
