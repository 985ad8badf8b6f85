"""Named-stream seed splitting: each stream's seed depends only on (master, name),
so adding a stream never shifts the others."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *names) -> int:
    h = hashlib.sha256(str(int(master)).encode())
    for n in names:
        h.update(b"/")
        h.update(str(n).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(master: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))
