"""Reproducible random streams.

Every random draw in the library goes through :func:`substream`, which builds a
Philox-4x64 (counter-based) generator from ``SeedSequence(seed, spawn_key=key)``.
A stream is therefore fully addressed by ``(seed, *key)`` and does not depend
on the order in which other streams were consumed, so trajectories and
reservoirs can be generated in any order or in parallel with identical bits.
"""

from __future__ import annotations

import numpy as np

# First element of the spawn key; keeps independent consumers apart.
RESERVOIR = 1
TRAIN_ICS = 2
TEST_ICS = 3
MLP = 4
PERTURBATION = 5
WINDOWS = 6


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
