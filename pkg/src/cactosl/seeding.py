"""Counter-based random substreams.

Every random draw in a run comes from ``substream(run_seed, stream_id, *index)``:
a Philox generator keyed by a ``SeedSequence`` whose spawn key is
``(stream_id, *index)``.  Streams are independent of one another and of the
order in which they are created, so results do not depend on worker count.
"""

import numpy as np

NETWORK_INIT = 0
EPISODE = 1
MINIBATCH = 2
EVAL_HEADING = 3
COMPARISON = 4


def substream(seed: int, stream: int, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(stream, *index))
    return np.random.Generator(np.random.Philox(ss))
