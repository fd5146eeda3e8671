"""Counter-based random streams keyed by (seed, component, subject).

Every subject owns its own Philox stream so that results do not depend on the
order in which subjects are visited or on the number of worker threads.
"""
from __future__ import annotations

import zlib

import numpy as np

SUBJECT = 0
SHARED_V = 1
GLOBAL = 2
INIT = 3
DATA = 4


def subject_key(subject_id) -> int:
    return zlib.crc32(str(subject_id).encode("utf-8"))


def stream(seed: int, component: int, key: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, component, key)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(component), int(key)))
    return np.random.Generator(np.random.Philox(ss))


def subject_stream(seed: int, subject_id, component: int = SUBJECT) -> np.random.Generator:
    return stream(seed, component, subject_key(subject_id))


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 63-bit child seed for replicate / grid-point fan-out."""
    key = [subject_key(lab) for lab in labels]
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(key))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)
