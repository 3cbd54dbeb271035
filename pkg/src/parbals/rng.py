"""Seed plumbing.

Every random quantity in the package is drawn from a generator keyed by the
experiment seed plus a purpose tag and any loop counters, so draws never
depend on evaluation order or on how many other draws happened before.
"""

import numpy as np

from . import _kernels

# purpose tags
SPLIT = 1
INITIAL = 2
SYNTH_FEATURES = 3
SYNTH_LABELS = 4
POSTERIOR = 5
VAL_SUBSAMPLE = 6
PSEUDO_LABELS = 7
RANDOM_ACQ = 8
GUMBEL = 9
SYNTH_WEIGHTS = 10


def generator(seed, *path):
    """PCG64 generator for the stream ``(seed, *path)``."""
    entropy = [int(seed)] + [int(p) for p in path]
    if any(e < 0 for e in entropy):
        raise ValueError(f"seed path must be non-negative, got {entropy}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def gumbel(seed, stream, index):
    """Standard Gumbel draws ``-ln(-ln u)`` from the counter-based stream."""
    u = _kernels.uniform_stream(seed, stream, index)
    return -np.log(-np.log(u))
