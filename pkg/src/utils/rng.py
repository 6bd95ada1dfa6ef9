"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, purpose, *keys)``. A vertex, replica or tree owns its own
stream, and the step index selects the block inside that stream, so the
numbers a vertex sees never depend on how work is split across threads or on
the order in which vertices are visited.
"""

import hashlib
from typing import Iterable, Sequence, Union

import numpy as np

# stream purposes
INIT = 0
NOISE = 1
TREE = 2
GRAPH = 3
AUX = 4
CHECK = 5

Key = Union[int, np.integer]


def label_hash(digits: Sequence[int]) -> int:
    """Stable 63-bit hash of an Ulam-Harris-Neveu label"""
    payload = b"\x00" + b"".join(int(d).to_bytes(4, "little") for d in digits)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little") >> 1


def stream(seed: int, purpose: int, *keys: Key) -> np.random.Generator:
    """Generator keyed by (seed, purpose, keys)"""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(purpose)] + [int(k) for k in keys]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normals(
    seed: int, purpose: int, keys: Iterable[Key], shape: tuple, prefix: Sequence[Key] = ()
) -> np.ndarray:
    """Stack of standard normal blocks, one independent stream per key"""
    keys = list(keys)
    out = np.empty((len(keys),) + tuple(shape))
    for i, key in enumerate(keys):
        out[i] = stream(seed, purpose, *prefix, key).standard_normal(shape)
    return out


def child_seed(seed: int, *keys: Key) -> int:
    """Derive an independent integer seed for a sub-experiment"""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)
