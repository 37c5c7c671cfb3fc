"""Uplink grant-free NOMA frame synthesis.

Builds every ingredient of the link-level simulation: complex spreading
codebooks, burst-sparse device activity with exact slot-to-slot overlap,
Rayleigh channels with optional log-distance path loss, QPSK modulation and
the stacked noisy observation.  All draws come from counter-based streams
derived from (seed, purpose, frame index), so frames are reproducible and
independent workers never collide.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .rng import (RngStream, derive_key, STREAM_ACTIVITY, STREAM_BITS,
                  STREAM_CHANNEL, STREAM_CODEBOOK, STREAM_DISTANCE,
                  STREAM_FRAME, STREAM_NOISE)

log = logging.getLogger(__name__)

# 4-ary complex spreading alphabet: re/im each from this set
DEFAULT_ALPHABET = (-2.0, -1.0, 0.0, 1.0)

_SQRT2 = np.sqrt(2.0)
# Gray labeling, index = 2*b0 + b1: 00, 01, 10, 11
QPSK_POINTS = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / _SQRT2


@dataclass
class ModulationScheme:
    constellation: np.ndarray
    bits_per_symbol: int

    @classmethod
    def qpsk(cls) -> "ModulationScheme":
        return cls(constellation=QPSK_POINTS.copy(), bits_per_symbol=2)


def modulate(bits: np.ndarray) -> np.ndarray:
    """Gray-map bit pairs onto unit-energy QPSK symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % 2 != 0:
        raise InputError(f"bit count {bits.size} is not a multiple of 2")
    idx = 2 * bits[0::2] + bits[1::2]
    return QPSK_POINTS[idx]


def demap(symbols: np.ndarray) -> np.ndarray:
    """Nearest-point QPSK demapping back to bits."""
    symbols = np.atleast_1d(np.asarray(symbols, dtype=np.complex128))
    d = np.abs(symbols[:, None] - QPSK_POINTS[None, :])
    idx = np.argmin(d, axis=1)
    bits = np.empty(2 * symbols.size, dtype=np.uint8)
    bits[0::2] = idx // 2
    bits[1::2] = idx % 2
    return bits


@dataclass
class SpreadingCodebook:
    num_devices: int
    spreading_length: int
    sequences: np.ndarray  # (N, K), unit-norm columns
    alphabet: tuple
    collisions: list = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        """C = [diag(c_1) ... diag(c_K)], shape (N, N*K)."""
        n, k = self.spreading_length, self.num_devices
        c = np.zeros((n, n * k), dtype=np.complex128)
        for i in range(k):
            c[:, i * n:(i + 1) * n] = np.diag(self.sequences[:, i])
        return c

    def xi_dense(self, num_slots: int) -> np.ndarray:
        """Rearranged sensing matrix xi, shape (N*J, N*J*K).

        Device block k is block-diagonal with J copies of diag(c_k).  Only
        for small instances; detectors use the factored structure instead.
        """
        n, k, j = self.spreading_length, self.num_devices, num_slots
        xi = np.zeros((n * j, n * j * k), dtype=np.complex128)
        for dev in range(k):
            for slot in range(j):
                r = slot * n
                c = dev * n * j + slot * n
                xi[r:r + n, c:c + n] = np.diag(self.sequences[:, dev])
        return xi


def generate_codebook(num_devices: int, spreading_length: int,
                      alphabet: Sequence[float] = DEFAULT_ALPHABET,
                      seed: int = 0) -> SpreadingCodebook:
    """Draw K spreading sequences entrywise uniform over the complex
    alphabet (re and im independently), then normalize columns to unit norm.

    Exact duplicate sequences are permitted and logged; all-zero draws are
    redrawn so normalization is well defined.
    """
    if num_devices < 1 or spreading_length < 1:
        raise ConfigError("num_devices and spreading_length must be >= 1")
    alphabet = tuple(float(a) for a in alphabet)
    if len(alphabet) == 0:
        raise ConfigError("spreading alphabet must be nonempty")
    stream = RngStream.from_seed(seed, STREAM_CODEBOOK)
    alpha = np.array(alphabet)
    n, k = spreading_length, num_devices
    re = alpha[stream.integers(n * k, len(alphabet))]
    im = alpha[stream.integers(n * k, len(alphabet))]
    seq = (re + 1j * im).reshape(n, k)
    # redraw any all-zero column (possible only when 0 is in the alphabet)
    for col in range(k):
        while not np.any(seq[:, col]):
            re = alpha[stream.integers(n, len(alphabet))]
            im = alpha[stream.integers(n, len(alphabet))]
            seq[:, col] = re + 1j * im
    seq = seq / np.linalg.norm(seq, axis=0, keepdims=True)
    collisions = []
    _, first_idx, inverse = np.unique(seq.round(12), axis=1,
                                      return_index=True, return_inverse=True)
    for col in range(k):
        rep = first_idx[inverse[col]]
        if rep != col:
            collisions.append((int(rep), int(col)))
    if collisions:
        log.warning("codebook has %d colliding sequence pair(s): %s",
                    len(collisions), collisions[:8])
    return SpreadingCodebook(num_devices=k, spreading_length=n,
                             sequences=seq, alphabet=alphabet,
                             collisions=collisions)


@dataclass
class ActivityFrame:
    slots: int
    supports: list  # J sorted int arrays
    indicators: np.ndarray  # (J, K) uint8
    sparsity: int
    configured_eta: float

    @property
    def num_devices(self) -> int:
        return self.indicators.shape[1]

    def union_support(self) -> np.ndarray:
        return np.flatnonzero(self.indicators.any(axis=0))


def _round_half_up(x: float) -> int:
    # +1e-9 guards values like 0.3*5 = 1.4999999999999998
    return int(np.floor(x + 0.5 + 1e-9))


def generate_activity(num_devices: int, sparsity: int, slots: int,
                      eta: float, seed: int = 0) -> ActivityFrame:
    """Burst-sparse supports: slot 1 uniform; slot j keeps exactly
    round(eta*S) devices of the previous support and fills the rest from
    outside the previous support (so overlap is exact by construction and a
    device dropped at slot j may rejoin at slot j+1)."""
    if sparsity > num_devices:
        raise ConfigError(f"sparsity {sparsity} exceeds device count "
                          f"{num_devices}")
    if sparsity < 0 or slots < 1:
        raise ConfigError("need sparsity >= 0 and slots >= 1")
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    stream = RngStream.from_seed(seed, STREAM_ACTIVITY)
    keep = min(_round_half_up(eta * sparsity), sparsity)
    all_devices = np.arange(num_devices)
    supports = []
    delta = np.zeros((slots, num_devices), dtype=np.uint8)
    prev = np.sort(stream.choice(all_devices, sparsity))
    supports.append(prev)
    delta[0, prev] = 1
    for j in range(1, slots):
        kept = stream.choice(prev, keep)
        pool = np.setdiff1d(all_devices, prev, assume_unique=False)
        fresh = stream.choice(pool, sparsity - keep)
        cur = np.sort(np.concatenate([kept, fresh]).astype(np.int64))
        supports.append(cur)
        delta[j, cur] = 1
        prev = cur
    return ActivityFrame(slots=slots, supports=supports, indicators=delta,
                         sparsity=sparsity, configured_eta=eta)


def temporal_correlation(prev_support, cur_support) -> float:
    """|prev & cur| / |cur|; NaN for an empty current support."""
    cur = np.asarray(list(cur_support))
    if cur.size == 0:
        return float("nan")
    prev = np.asarray(list(prev_support))
    return len(np.intersect1d(prev, cur)) / cur.size


def path_loss_db(distance_km) -> np.ndarray:
    """Log-distance path loss 128.1 + 37.6 log10(d), d in km."""
    d = np.asarray(distance_km, dtype=np.float64)
    if np.any(d <= 0):
        raise ConfigError("path-loss distances must be positive")
    return 128.1 + 37.6 * np.log10(d)


@dataclass
class PathLossConfig:
    enabled: bool = False
    distances_km: Optional[np.ndarray] = None  # (K,), drawn if None


@dataclass
class ChannelRealization:
    gains: np.ndarray  # (J, K, N) complex
    path_loss_enabled: bool
    distances_km: Optional[np.ndarray]
    power_scale: np.ndarray  # (K,) per-device variance factor
    model: str = "flat"


def generate_channel(num_devices: int, spreading_length: int, slots: int,
                     path_loss: Optional[PathLossConfig] = None,
                     seed: int = 0, model: str = "flat") -> ChannelRealization:
    """Per-slot Rayleigh fading, CN(0,1), new draw every slot.

    model='flat' (default): one gain per (slot, device), constant across the
    spreading positions -- the short-spreading reading under which blind
    detection is possible at all (despreading combines coherently).
    model='per-subcarrier': independent CN(0,1) per (slot, device, position).
    With path loss enabled the per-device variance scales by 10^(-PL(d)/10).
    """
    pl = path_loss or PathLossConfig()
    stream = RngStream.from_seed(seed, STREAM_CHANNEL)
    if model == "flat":
        g = stream.gaussian_complex(slots * num_devices)
        g = np.repeat(g.reshape(slots, num_devices, 1), spreading_length,
                      axis=2)
    elif model == "per-subcarrier":
        g = stream.gaussian_complex(slots * num_devices * spreading_length)
        g = g.reshape(slots, num_devices, spreading_length)
    else:
        raise ConfigError(f"unknown channel model {model!r}")
    scale = np.ones(num_devices)
    distances = None
    if pl.enabled:
        if pl.distances_km is None:
            dstream = RngStream.from_seed(seed, STREAM_DISTANCE)
            distances = 0.05 + 0.95 * dstream.uniform(num_devices)
        else:
            distances = np.asarray(pl.distances_km, dtype=np.float64)
            if distances.shape != (num_devices,):
                raise ConfigError("distances_km must have one entry per device")
        scale = 10.0 ** (-path_loss_db(distances) / 10.0)
        g = g * np.sqrt(scale)[None, :, None]
    return ChannelRealization(gains=g, path_loss_enabled=pl.enabled,
                              distances_km=distances, power_scale=scale,
                              model=model)


@dataclass
class ReceivedFrame:
    y: np.ndarray              # (N*J,) stacked slot-major
    noise_variance: float
    snr_db: float
    activity: ActivityFrame
    channel: ChannelRealization
    bits: np.ndarray           # (J, K, 2) uint8, zero rows for inactive
    symbols: np.ndarray        # (J, K) complex, zero for inactive
    noise: np.ndarray          # (N*J,) the stored draw
    codebook: SpreadingCodebook

    @property
    def num_slots(self) -> int:
        return self.activity.slots

    def slot_observation(self, j: int) -> np.ndarray:
        n = self.codebook.spreading_length
        return self.y[j * n:(j + 1) * n]

    def sparse_vector(self) -> np.ndarray:
        """Ground-truth x, device-major blocks of per-slot s*g segments."""
        n = self.codebook.spreading_length
        k = self.codebook.num_devices
        j = self.num_slots
        x = np.zeros(n * j * k, dtype=np.complex128)
        for dev in range(k):
            for slot in range(j):
                if self.activity.indicators[slot, dev]:
                    seg = self.symbols[slot, dev] * self.channel.gains[slot, dev]
                    x[dev * n * j + slot * n: dev * n * j + (slot + 1) * n] = seg
        return x


def noise_variance_for_snr(codebook: SpreadingCodebook, channel_scale: np.ndarray,
                           sparsity: int, snr_db: float) -> float:
    """Analytic noise power: snr_db = 10 log10(E||xi x||^2 / (N J) / sigma^2).

    With unit-norm sequences and unit-variance fading, the expected received
    signal power per complex dimension is S * mean(per-device scale) / N;
    an empty frame falls back to the S=1 reference so sigma^2 stays positive.
    """
    s_eff = max(int(sparsity), 1)
    sig = s_eff * float(np.mean(channel_scale)) / codebook.spreading_length
    return sig * 10.0 ** (-snr_db / 10.0)


def effective_atoms(codebook: SpreadingCodebook, channel: ChannelRealization,
                    slot: int) -> np.ndarray:
    """Per-device effective receive signatures c_k * g_k for one slot,
    shape (N, K)."""
    return codebook.sequences * channel.gains[slot].T


def synthesize_frame(codebook: SpreadingCodebook, activity: ActivityFrame,
                     channel: ChannelRealization, bits: np.ndarray,
                     snr_db: float, seed: int = 0) -> ReceivedFrame:
    """Superpose active-device signals per slot and add CN(0, sigma^2) noise
    with sigma^2 calibrated analytically from snr_db."""
    n = codebook.spreading_length
    k = codebook.num_devices
    j = activity.slots
    bits = np.asarray(bits, dtype=np.uint8)
    if activity.num_devices != k:
        raise InputError("activity and codebook disagree on device count")
    if channel.gains.shape != (j, k, n):
        raise InputError(f"channel gains shaped {channel.gains.shape}, "
                         f"expected {(j, k, n)}")
    if bits.shape != (j, k, 2):
        raise InputError(f"bits shaped {bits.shape}, expected {(j, k, 2)}")
    symbols = np.zeros((j, k), dtype=np.complex128)
    for slot in range(j):
        active = activity.supports[slot]
        if len(active):
            symbols[slot, active] = modulate(bits[slot, active].ravel())
    signal = np.zeros(n * j, dtype=np.complex128)
    for slot in range(j):
        atoms = effective_atoms(codebook, channel, slot)
        signal[slot * n:(slot + 1) * n] = atoms @ symbols[slot]
    sigma2 = noise_variance_for_snr(codebook, channel.power_scale,
                                    activity.sparsity, snr_db)
    stream = RngStream.from_seed(seed, STREAM_NOISE)
    w = np.sqrt(sigma2) * stream.gaussian_complex(n * j)
    return ReceivedFrame(y=signal + w, noise_variance=sigma2, snr_db=snr_db,
                         activity=activity, channel=channel, bits=bits,
                         symbols=symbols, noise=w, codebook=codebook)


def random_bits(num_devices: int, slots: int, activity: ActivityFrame,
                seed: int) -> np.ndarray:
    """Uniform bits for every (slot, device, bit); inactive entries zeroed.
    Always consumes the same number of draws regardless of the supports."""
    stream = RngStream.from_seed(seed, STREAM_BITS)
    bits = (stream.uniform(slots * num_devices * 2) < 0.5).astype(np.uint8)
    bits = bits.reshape(slots, num_devices, 2)
    bits *= activity.indicators[:, :, None]
    return bits


def synthesize_random_frame(codebook: SpreadingCodebook, sparsity: int,
                            slots: int, eta: float, snr_db: float,
                            master_seed: int, frame_index: int,
                            path_loss: Optional[PathLossConfig] = None,
                            channel_model: str = "flat") -> ReceivedFrame:
    """One fully random frame, reproducible from (master_seed, frame_index)."""
    fseed = derive_key(master_seed, STREAM_FRAME, frame_index)
    activity = generate_activity(codebook.num_devices, sparsity, slots, eta,
                                 seed=fseed)
    channel = generate_channel(codebook.num_devices,
                               codebook.spreading_length, slots,
                               path_loss=path_loss, seed=fseed,
                               model=channel_model)
    bits = random_bits(codebook.num_devices, slots, activity, seed=fseed)
    return synthesize_frame(codebook, activity, channel, bits, snr_db,
                            seed=fseed)
