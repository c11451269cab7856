"""Deterministic random-stream derivation.

Every random decision in the package flows from a single master seed through
`derive_rng`, so any run is bit-reproducible and independent sub-streams can
be added without perturbing existing ones.
"""
from __future__ import annotations

import numpy as np

# Stream ids, one per independent consumer of randomness. Appending new ids
# never changes the draws of existing streams.
STREAM_INIT = 0         # shared model initialization
STREAM_TASK = 1         # meta-training task data
STREAM_LOCAL = 2        # per-agent local (offline) training batches
STREAM_AGENT = 3        # per-agent backward-phase ascent batches
STREAM_IMAML = 4        # per-agent inner-loop batches of the baseline
STREAM_TRIAL = 5        # fine-tune trial task sampling
STREAM_RANDOM_INIT = 6  # the random-initializer control


def derive_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Child generator fully determined by (master_seed, path).

    Distinct paths give statistically independent streams. Adding trials or
    agents never changes the draws seen by earlier ones.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.default_rng(ss)


def derive_seed(master_seed: int, *path: int) -> int:
    """A plain integer seed derived the same way (for seed-valued fields)."""
    return int(derive_rng(master_seed, *path).integers(0, 2**63))
