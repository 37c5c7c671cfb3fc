"""Deterministic counter-based pseudo-randomness.

The generator is a counter-based SplitMix64: draw ``i`` of a stream keyed by
``key`` is

    out(key, i) = mix64(key + (i + 1) * GOLDEN)   (all mod 2**64)

with the standard finalizer

    mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
              z ^= z >> 27; z *= 0x94D049BB133111EB;
              return z ^ (z >> 31)

and GOLDEN = 0x9E3779B97F4A7C15.  Because a draw is a pure function of
(key, counter), streams can be split, skipped and generated in any block
size without changing values, and any language can reproduce them from the
constants above.

Uniform doubles take the top 53 bits: u = (x >> 11) * 2**-53 in [0, 1).
Gaussians use Box-Muller on pairs of consecutive draws; a complex CN(0,1)
sample consumes exactly two raw draws.  Integer mixing is exact, so streams
are bit-identical across platforms; the float stages use numpy's libm only
(never the JIT kernels), so they are stable for a given numpy build.

Substreams: ``derive_key(master, t1, t2, ...)`` folds integer tags as

    k = mix64(master ^ SALT); for t in tags: k = mix64(k + (t + 1) * GOLDEN)

with SALT = 0x8E1CD9F26A3B75D4.  Module-purpose tags live in the STREAM_*
constants so parallel workers never share a stream.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
SALT = 0x8E1CD9F26A3B75D4
_MASK = (1 << 64) - 1

# purpose tags for substream derivation
STREAM_CODEBOOK = 1
STREAM_ACTIVITY = 2
STREAM_CHANNEL = 3
STREAM_BITS = 4
STREAM_NOISE = 5
STREAM_INIT = 6
STREAM_DROPOUT = 7
STREAM_SHUFFLE = 8
STREAM_FRAME = 9
STREAM_DISTANCE = 10


def mix64(z: int) -> int:
    """Scalar SplitMix64 finalizer on python ints (exact mod 2**64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(master: int, *tags: int) -> int:
    """Fold integer tags into a child stream key. Order matters."""
    k = mix64((master & _MASK) ^ SALT)
    for t in tags:
        k = mix64((k + ((int(t) + 1) * GOLDEN)) & _MASK)
    return k


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Single-owner deterministic stream; split() for concurrent use."""

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & _MASK
        self.counter = int(counter)

    @classmethod
    def from_seed(cls, seed: int, *tags: int) -> "RngStream":
        return cls(derive_key(seed, *tags))

    def split(self, tag: int) -> "RngStream":
        return RngStream(derive_key(self.key, tag))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` uint64 draws; advances the counter by ``n``."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.key) + idx * np.uint64(GOLDEN)
        return _mix64_vec(z)

    def uniform(self, n: int) -> np.ndarray:
        """i.i.d. uniforms in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)) * (2.0 ** -53)

    def gaussian(self, n: int) -> np.ndarray:
        """i.i.d. N(0, 1) via Box-Muller; consumes 2*ceil(n/2) raw draws."""
        pairs = (n + 1) // 2
        x = self.raw(2 * pairs)
        # u1 in (0, 1] so log() is finite
        u1 = ((x[0::2] >> np.uint64(11)) + np.uint64(1)) * (2.0 ** -53)
        u2 = (x[1::2] >> np.uint64(11)) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def gaussian_complex(self, n: int) -> np.ndarray:
        """i.i.d. CN(0,1): real/imag independent N(0, 1/2)."""
        x = self.raw(2 * n)
        u1 = ((x[0::2] >> np.uint64(11)) + np.uint64(1)) * (2.0 ** -53)
        u2 = (x[1::2] >> np.uint64(11)) * (2.0 ** -53)
        r = np.sqrt(-np.log(u1))  # -2 ln u / 2: unit total variance
        theta = (2.0 * np.pi) * u2
        return r * np.cos(theta) + 1j * (r * np.sin(theta))

    def integers(self, n: int, bound: int) -> np.ndarray:
        """Uniform ints in [0, bound). Bias is O(bound / 2**53): negligible
        for the device counts used here."""
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def choice(self, pool: np.ndarray, k: int) -> np.ndarray:
        """k distinct elements of pool, uniform without replacement
        (partial Fisher-Yates; consumes k uniforms)."""
        pool = np.array(pool, copy=True)
        m = len(pool)
        if k > m:
            raise ValueError(f"cannot draw {k} from pool of {m}")
        u = self.uniform(k)
        for i in range(k):
            j = i + min(int(u[i] * (m - i)), m - i - 1)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def permutation(self, n: int) -> np.ndarray:
        return self.choice(np.arange(n), n)
