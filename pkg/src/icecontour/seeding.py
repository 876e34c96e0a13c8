"""Counter-based seed derivation so every job's randomness is independent of scheduling."""
import zlib

import numpy as np


def _key(v):
    if isinstance(v, str):
        return zlib.crc32(v.encode("utf-8"))
    if isinstance(v, float):
        # leads are half-months; keep the key integral
        return int(round(v * 2))
    return int(v)


def derive_seed(base: int, stage: str, *keys) -> int:
    """A 63-bit seed determined by ``(base, stage, *keys)`` alone."""
    seq = np.random.SeedSequence(int(base), spawn_key=(_key(stage), *(_key(k) for k in keys)))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(base: int, stage: str, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, stage, *keys))
