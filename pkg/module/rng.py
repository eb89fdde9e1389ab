"""Counter-based random streams.

Every random draw in the project comes from a generator returned here. A
stream is keyed by a seed, a label naming what the stream is for, and any
number of integer counters (trial index, guess index, ...). The same key gives
the same stream on every platform and in every worker, and no stream depends
on how many others were drawn before it.
"""

import zlib

import numpy as np


def _label_key(label: str) -> int:
    # crc32 rather than hash(): str hashing is salted per process.
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *counters: int) -> np.random.Generator:
    """Return the Philox stream for (seed, label, *counters)."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (_label_key(label), *(int(counter) for counter in counters))
    sequence = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(sequence))


def fresh_seed() -> int:
    """Draw a seed from OS entropy, for runs that were not given one."""
    # Fits a signed 64-bit integer.
    return int(np.random.SeedSequence().entropy) % (1 << 63)
