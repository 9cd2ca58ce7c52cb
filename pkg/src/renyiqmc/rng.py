"""Deterministic, checkpointable random streams for the Monte Carlo engine.

The sampler needs a generator that (a) runs inside nopython-compiled kernels,
(b) has a tiny serializable state so checkpoints restart bit-exactly, and
(c) supports cheaply derived independent streams, one per chain. PCG32
(O'Neill's pcg32, the XSH-RR variant) satisfies all three: 128 bits of state
per stream, a 64-bit output permutation, and distinct odd increments give
statistically independent sequences. This module holds the pure-Python
reference implementation plus stream-derivation helpers; the compiled kernels
use the identical update written over the same uint64[2] state layout, and
the test suite pins both to shared known-answer vectors.

State layout: ``state_vec = np.array([state, inc], dtype=np.uint64)``.
"""

from __future__ import annotations

import numpy as np

PCG_MULT = np.uint64(6364136223846793005)
_U64 = np.uint64
_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)

#: 2^-32, the scale that maps a uint32 to (0, 1).
_INV_2_32 = float(2.0**-32)


def splitmix64(x: int) -> int:
    """One splitmix64 step; used to fan a master seed out into substreams."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


def derive_stream_seeds(master_seed: int, n_streams: int) -> list[tuple[int, int]]:
    """(seed, sequence) pairs for ``n_streams`` independent PCG32 streams.

    Both members of each pair come from an iterated splitmix64 walk off the
    master seed, so any master seed gives decorrelated streams and the
    mapping is reproducible across platforms.
    """
    if n_streams < 1:
        raise ValueError(f"n_streams must be >= 1, got {n_streams}")
    pairs = []
    x = master_seed & 0xFFFFFFFFFFFFFFFF
    for _ in range(n_streams):
        x = splitmix64(x)
        seed = x
        x = splitmix64(x)
        seq = x
        pairs.append((seed, seq))
    return pairs


def pcg32_init(seed: int, seq: int) -> np.ndarray:
    """Fresh PCG32 state vector for (seed, stream-sequence)."""
    state_vec = np.zeros(2, dtype=np.uint64)
    state_vec[1] = _U64(((seq << 1) | 1) & 0xFFFFFFFFFFFFFFFF)
    state_vec[0] = _U64(0)
    pcg32_next(state_vec)
    state_vec[0] = _U64((int(state_vec[0]) + (seed & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF)
    pcg32_next(state_vec)
    return state_vec


def pcg32_next(state_vec: np.ndarray) -> int:
    """Advance one step, return the next uint32 (as a Python int)."""
    old = int(state_vec[0])
    state_vec[0] = _U64((old * int(PCG_MULT) + int(state_vec[1])) & 0xFFFFFFFFFFFFFFFF)
    xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
    rot = (old >> 59) & 31
    return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF


def pcg32_double(state_vec: np.ndarray) -> float:
    """Uniform double in (0, 1): (u32 + 0.5) * 2^-32 (never exactly 0 or 1)."""
    return (pcg32_next(state_vec) + 0.5) * _INV_2_32


def pcg32_coin(state_vec: np.ndarray) -> bool:
    """Fair coin from the top bit."""
    return pcg32_next(state_vec) < 0x80000000


def pcg32_below(state_vec: np.ndarray, bound: int) -> int:
    """Unbiased integer in [0, bound) by rejection (Lemire-style threshold)."""
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    threshold = (0x100000000 - bound) % bound
    while True:
        r = pcg32_next(state_vec)
        if r >= threshold:
            return r % bound
