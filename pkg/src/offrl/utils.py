#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

import hashlib
from fractions import Fraction

import numpy as np


def substream(seed: int, *path) -> np.random.SeedSequence:
    """
    Derive the seed sequence for one independent substream.

    Args:
        seed (int): root seed.
        path: integers (or strings) naming the substream, e.g. a replication index.
    Returns:
        numpy.random.SeedSequence: deterministic in (seed, path).
    """
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_path_key(p) for p in path))


def derive_seed(seed: int, *path) -> int:
    """64-bit child seed for the substream (seed, *path)."""
    return int(substream(seed, *path).generate_state(1, dtype=np.uint64)[0])


def philox_key(seed: int, *path) -> np.ndarray:
    """128-bit key for a counter-based Philox stream."""
    return substream(seed, *path).generate_state(2, dtype=np.uint64)


def generator(seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=philox_key(seed, *path)))


def _path_key(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=4).digest(), "little")
    return int(part)


def array_hash(*arrays) -> str:
    """64-bit hex digest of the given arrays (shape and float64 content)."""
    digest = hashlib.blake2b(digest_size=8)
    for array in arrays:
        a = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        digest.update(str(a.shape).encode())
        digest.update(a.tobytes())
    return digest.hexdigest()


def parse_number(text) -> float:
    """Parse a decimal or a fraction such as '1/3'."""
    if isinstance(text, (int, float)):
        return float(text)
    return float(Fraction(str(text).strip()))


def parse_params(items) -> dict:
    """
    Turn ["eta=1/3", "n_states=5"] into {"eta": "1/3", "n_states": "5"}.
    """
    params = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"parameter must look like key=value: {item}")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num / den with 0 wherever den == 0."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def max_ratio(num: np.ndarray, den: np.ndarray) -> float:
    """max of num/den over num > 0; inf if den vanishes where num does not."""
    mask = num > 0
    if not mask.any():
        return 0.0
    if (den[mask] <= 0).any():
        return float("inf")
    return float((num[mask] / den[mask]).max())
