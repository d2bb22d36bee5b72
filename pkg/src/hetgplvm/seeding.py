"""Deterministic seed derivation.

All randomness in a run flows from one master seed.  Sub-tasks (epoch
shuffles, CV repetitions, consensus resamples, ...) derive their own
streams by hashing the master seed together with a task path, so results
never depend on execution order or on how many workers ran in parallel.
"""

import hashlib

import numpy as np


def derive_seed(master, *path):
    """Hash ``master`` and a path of task tags into a 64-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for tag in path:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def substream(master, *path):
    """A `numpy.random.Generator` seeded from ``derive_seed(master, *path)``."""
    return np.random.default_rng(derive_seed(master, *path))
