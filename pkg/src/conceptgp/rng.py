"""Named random substreams.

Every stochastic step in the pipeline (seed selection, acquisition pools,
Monte-Carlo draws, forest bootstraps) pulls its generator from one root seed
plus a purpose tag, so two runs with the same seed agree stream-by-stream no
matter how the steps interleave. Tags are hashed with sha-256, which keeps the
derivation stable across platforms and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "as_generator"]


def substream(seed: int, *tags: int | str) -> np.random.Generator:
    """Derive an independent generator from a root seed and purpose tags."""
    material = "|".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    entropy = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Coerce an rng argument: pass generators through, seed ints, default 0."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return substream(0, "default")
    return substream(int(rng), "direct")
