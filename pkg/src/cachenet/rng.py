"""Seeded random streams.

Every randomized routine draws from a Philox counter-based generator keyed by
``(seed, stream)``. Distinct purposes within one replication use distinct
stream ids so that, e.g., changing the cache sampler never perturbs the
request draws of the same seed.
"""
import numpy as np

BIT_GENERATOR = "Philox4x64-10"
RNG_VERSION = f"numpy-{np.__version__}/{BIT_GENERATOR}"

# Stream ids. Values are part of the reproducibility contract; do not renumber.
REQUESTS = 1
PLACEMENT = 2
CACHES = 3
PERTURB = 4
STREAMING = 5
LIBRARY = 6
RATES = 7
HIT_MC = 8
INSTANCE = 9
TOPOLOGY = 10


def make_rng(seed, stream=0):
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(ss))
