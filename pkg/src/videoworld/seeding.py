"""Deterministic seed derivation so every run stage gets an independent stream."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 63-bit seed for a named sub-stream of a root seed."""
    digest = hashlib.blake2b(f"{root_seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(root_seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, label)))


def seed_torch(root_seed: int, label: str) -> None:
    """Seed torch's global generator; used right before deterministic module init."""
    torch.manual_seed(derive_seed(root_seed, label))


def rng_state_to_jsonable(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def rng_from_jsonable(payload: dict) -> np.random.Generator:
    if payload["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {payload['bit_generator']!r}")
    rng = np.random.Generator(np.random.PCG64(0))
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(payload["state"]), "inc": int(payload["inc"])},
        "has_uint32": payload["has_uint32"],
        "uinteger": payload["uinteger"],
    }
    return rng
