"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, a numpy
``Generator`` driven by the Philox-4x64 counter-based bit generator.
Derived seeds (per block, per epoch) come from :func:`splitmix64`, so a
single stored 64-bit seed regenerates every downstream stream.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One round of the SplitMix64 finalizer on a 64-bit integer."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Hash ``seed`` together with integer ``keys`` into a new 64-bit seed."""
    h = splitmix64(seed)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & _MASK))
