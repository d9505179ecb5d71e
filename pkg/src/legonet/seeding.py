"""Deterministic 64-bit seed derivation.

Every component that needs randomness derives its seed from a user-visible
64-bit seed through ``mix_seed``, never from global state or history. The
mixing function is pinned bit-exactly so that independently written code
(tests, other implementations of the checkpoint format) can reproduce it:

    splitmix64(x):
        x = (x + 0x9E3779B97F4A7C15) mod 2^64
        x = ((x XOR (x >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
        x = ((x XOR (x >> 27)) * 0x94D049BB133111EB) mod 2^64
        return x XOR (x >> 31)

    mix_seed(seed, stream) = splitmix64((seed mod 2^64) XOR splitmix64(stream mod 2^64))

Adapter j of a network seeded with g trains with mix_seed(g, j); re-training
during unlearning reuses the same value, which is what makes the unlearned
state bit-identical to a scratch build on the retained data.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Reserved stream tags, all >= 2^32 so they can never collide with an
# adapter or shard index.
KEY_STREAM = 1 << 32
SHARD_ASSIGN_STREAM = (1 << 32) + 1
DELETION_STREAM = (1 << 32) + 2
TUNE_STREAM = (1 << 32) + 3
NGRAD_STREAM = (1 << 32) + 4


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, stream: int) -> int:
    """Derive a child seed from (seed, stream), independent of call history."""
    return splitmix64((int(seed) & _MASK64) ^ splitmix64(int(stream) & _MASK64))


def rng_from(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the only RNG construction used in the package."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
