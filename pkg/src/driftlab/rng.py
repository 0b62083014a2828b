"""Counter-based random streams keyed by (seed, purpose, indices)."""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_key(purpose):
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed, purpose, *indices):
    """Return an independent Philox generator for ``(seed, purpose, *indices)``.

    Streams never overlap between purposes or indices, so results do not
    depend on the order in which callers draw from them.
    """
    seed = int(seed) & _MASK64
    words = [seed & 0xFFFFFFFF, seed >> 32, _purpose_key(purpose)]
    words.extend(int(i) for i in indices)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(seed, purpose, *indices):
    """A 63-bit integer seed derived deterministically from the inputs."""
    return int(stream(seed, purpose, *indices).integers(0, 2**63 - 1))
