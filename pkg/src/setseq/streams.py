"""Named counter-based random substreams.

Every stochastic component draws from a Philox generator keyed by
``(seed, stream name, *indices)`` through :class:`numpy.random.SeedSequence`.
Streams are therefore independent of call order, thread layout, and of each
other; re-running any component with the same coordinates reproduces its
draws bit-for-bit. Within the simulator, the transition uniforms for period
``t`` come from the stream ``("transitions", episode, t)`` and unit ``i``
consumes element ``i`` of that vector, which makes unit relabeling act as a
pure permutation of the drawn values.
"""

from __future__ import annotations

import numpy as np

# Registry of stream names; values are stable and must never be reused.
STREAMS = {
    "init_states": 0,
    "transitions": 1,
    "observe": 2,
    "unit_count": 3,
    "unit_subsample": 4,
    "param_init": 5,
    "dropout": 6,
    "market": 7,
    "episode_order": 8,
    "noise": 9,
    "window_sample": 10,
}


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the Philox generator for a named stream coordinate."""
    sid = STREAMS[name]
    key = np.random.SeedSequence(entropy=int(seed), spawn_key=(sid, *[int(i) for i in indices]))
    return np.random.Generator(np.random.Philox(key))
