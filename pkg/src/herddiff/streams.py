"""Counter-based random streams derived from one root seed.

A stream is addressed by ``(root, purpose, *keys)``; the same address always
yields the same Philox generator, and distinct addresses are statistically
independent. Chains are grouped into fixed-size blocks so a chain's random
numbers depend only on its index, never on how many chains run or on how
the work is scheduled.
"""

from __future__ import annotations

import numpy as np

INIT = 0
GUMBEL = 1
FORWARD = 2
IID = 3

BLOCK_SIZE = 1024


def stream(root: int, purpose: int, *keys: int) -> np.random.Generator:
    if root < 0:
        raise ValueError(f"root seed must be nonnegative, got {root}")
    ss = np.random.SeedSequence(int(root), spawn_key=(int(purpose), *(int(k) for k in keys)))
    return np.random.Generator(np.random.Philox(ss))


def block_of(chain: int) -> tuple[int, int]:
    """(block index, offset inside block) for a chain index."""
    return divmod(int(chain), BLOCK_SIZE)
