"""Named deterministic random streams.

Every stochastic component draws from its own stream so that adding or
reordering draws in one place never shifts another component's sequence.
Streams are derived by hashing a tuple of parts (ints or strings), so the
same parts always yield the same generator on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Map a tuple of parts to a stable 64-bit seed via SHA-256."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*parts: int | str) -> np.random.Generator:
    """A PCG64 generator keyed by the given parts."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
