"""Counter-based random substreams.

Every random draw in the pipeline comes from a generator keyed by
``(master seed, stream id, *counters)``.  Streams are independent and
order-free: sampling scenario i=7 never depends on whether i=6 was
sampled first, which keeps scenario sets bit-reproducible and safe to
generate concurrently.
"""

from __future__ import annotations

import numpy as np

# Stream ids.  Never renumber these: they are part of the on-disk
# reproducibility contract for scenario sets and checkpoints.
POLICY_INIT = 0
X0 = 1
XI = 2
OMEGA = 3
SHUFFLE = 4
SIM_X0 = 5
SIM_NOISE = 6
BENCH = 7


def substream(seed: int, stream: int, *counters: int) -> np.random.Generator:
    """Return a fresh generator for the given (seed, stream, counters) key."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence((seed, stream) + counters))
