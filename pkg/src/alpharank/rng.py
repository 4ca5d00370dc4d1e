"""Counter-based random streams keyed by (master seed, purpose, indices).

Every source of randomness in the library is a numpy Generator backed by
Philox, derived from an explicit integer key path. Streams derived from
distinct paths are independent, and the mapping from path to stream does not
depend on thread or process layout, which is what makes results
bit-reproducible under any worker count.
"""

import numpy as np

# purpose tags used as the second key component
TRUTH = 1        # ground-truth draws
INIT = 2         # initial-stage observations
OBS = 3          # sequential-stage observations
ROLLOUT = 4      # rollout pseudo-truths and inner observations
SELECT = 5       # Monte Carlo selection draws
PARTICLE = 6     # particle initialization and resampling
EVAL = 7         # policy-evaluation problem sets
TRAIN = 8        # network initialization and minibatch shuffling
GROUP = 9        # screening-group shuffles


def stream(*key):
    """Return a Philox generator for an integer key path.

    Keys may be any mix of non-negative ints; the same path always yields
    the same stream.
    """
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(ss))


def spawn(gen, n):
    """Split ``n`` child generators off ``gen`` deterministically."""
    return gen.spawn(n)
