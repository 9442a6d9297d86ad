"""Counter-style random substreams.

Every random draw in the package comes from a generator keyed by a master
seed plus a tuple of integers (e.g. ``(n, trial, stage)``), so results do not
depend on execution order or on how work is split across processes.
"""

from __future__ import annotations

import numpy as np


def substream_seq(seed, *key: int) -> np.random.SeedSequence:
    """``SeedSequence`` for ``seed`` extended by ``key``."""
    if isinstance(seed, np.random.SeedSequence):
        entropy, base = seed.entropy, tuple(seed.spawn_key)
    else:
        entropy, base = seed, ()
    return np.random.SeedSequence(entropy, spawn_key=base + tuple(int(k) for k in key))


def substream(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(substream_seq(seed, *key))
