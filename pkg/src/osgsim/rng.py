"""Counter-based random streams.

Every stochastic operation draws from a Philox generator keyed by the run seed
plus a structural key (stream tag, atom/shot index), so results are bit-stable
under reordering and parallel evaluation.
"""

import numpy as np

# Stream tags; keep stable, they are part of the reproducibility contract.
TAG_SAMPLING = 1
TAG_WALK = 2
TAG_CAMERA = 3
TAG_GMM = 4
TAG_BOOTSTRAP = 5
TAG_SPIN_CHOICE = 6

_MIX = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox stream keyed by (seed, *key)."""
    mixed = 0
    for k in key:
        mixed = (mixed * _MIX + int(k) + 1) & _MASK
    return np.random.Generator(
        np.random.Philox(key=np.array([int(seed) & _MASK, mixed], dtype=np.uint64))
    )
