"""Named, seedable random streams.

All randomness in the toolkit flows from a single integer seed through
substreams addressed by a path of labels, e.g. ``substream(seed, "pool", 7)``.
The bit generator is Philox (counter-based), so streams are reproducible
across platforms and independent of scheduling order.  The mapping from
(seed, path) to stream is frozen by golden tests; changing it invalidates
recorded outputs.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_FAMILY = "philox4x64"


def _component(part: int | str) -> int:
    """Map a path component to a stable 64-bit entropy word."""
    if isinstance(part, bool):  # bool is an int subclass; reject to avoid surprises
        raise TypeError("stream path components must be int or str, not bool")
    if isinstance(part, int):
        if part < 0:
            raise ValueError(f"stream path ints must be non-negative, got {part}")
        return part
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator for a named stream under ``seed``.

    Identical (seed, path) always yields a bitwise-identical stream.
    """
    entropy = [_component(seed)] + [_component(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *path: int | str) -> int:
    """Collapse (seed, path) to a plain integer seed for APIs that take one."""
    entropy = [_component(seed)] + [_component(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
