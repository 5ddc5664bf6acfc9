"""Deterministic seed derivation.

Every random draw in sdflow comes from a ``numpy.random.Generator`` built
from an explicit integer seed. Independent streams (per iteration, per
trial, per calibration draw) are derived from a base seed and a tuple of
integer keys through ``numpy.random.SeedSequence`` so that changing one
stream never perturbs another.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.random.Generator


def derive_seed(base: int, *keys: int) -> int:
    """Derive a child seed from ``base`` and integer ``keys``.

    Args:
        base: Root seed.
        *keys: Stream identifiers, e.g. ``(iteration,)`` or ``(trial, 3)``.

    Returns:
        A 63-bit non-negative integer seed.
    """
    seq = np.random.SeedSequence([int(base), *(int(k) for k in keys)])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Return a generator for ``seed`` (optionally derived with ``keys``).

    A ``Generator`` passed in is returned unchanged when no keys are given.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("keys cannot be combined with an existing Generator")
        return seed
    if keys:
        return np.random.default_rng(derive_seed(seed, *keys))
    return np.random.default_rng(int(seed))
