"""Detection and decoding metrics.

BER accounting: over each slot, the per-device symbol carries 2 bits.
Correctly detected devices contribute their actual bit mismatches; a missed
active device loses all of its bits; a falsely detected device contributes a
full-length error burst.  The denominator counts the bits of the union of
true and estimated supports, so BER stays in [0, 1] and an empty estimate
scores 1.0.
"""

import numpy as np

from .errors import InputError

# one clockwise 90-degree constellation rotation expressed on Gray bit pairs:
# 00 -> 01 -> 11 -> 10 -> 00, indexed by pair value 2*b0 + b1
_ROT_NEXT = {0: 1, 1: 3, 3: 2, 2: 0}


def detection_probability(support_true, detected) -> float:
    """Fraction of truly active devices with nonzero decoded output."""
    sup = set(int(v) for v in support_true)
    if not sup:
        raise InputError("detection probability undefined for S = 0")
    det = set(int(v) for v in detected)
    return len(sup & det) / len(sup)


def identification_accuracy(support_true, support_est, sparsity: int) -> float:
    """Percent of truly active devices present in the estimated support."""
    if sparsity <= 0:
        raise InputError("accuracy undefined for S = 0")
    sup = set(int(v) for v in support_true)
    est = set(int(v) for v in support_est)
    return 100.0 * len(sup & est) / sparsity


def false_alarm_rate(support_true, support_est, num_devices: int) -> float:
    """Fraction of inactive devices wrongly declared active."""
    sup = set(int(v) for v in support_true)
    est = set(int(v) for v in support_est)
    inactive = num_devices - len(sup)
    if inactive <= 0:
        return 0.0
    return len(est - sup) / inactive


def _pair_value(bits) -> int:
    return int(2 * bits[0] + bits[1])


def _rotate_pair(value: int, times: int) -> int:
    for _ in range(times % 4):
        value = _ROT_NEXT[value]
    return value


def bit_error_rate(tx_bits: np.ndarray, bits_est, supports_true,
                   supports_est, rotation_invariant: bool = False) -> float:
    """Frame BER with miss and false-alarm penalties.

    tx_bits: (J, K, 2) ground truth; bits_est: per-slot {device: (2,) bits};
    supports_*: per-slot device index collections.  With
    rotation_invariant=True (blind detection) each matched device's errors
    are minimized over a single constellation rotation applied to all of its
    slots.
    """
    slots = len(supports_true)
    errors = 0
    total = 0
    matched = {}
    for j in range(slots):
        sup = set(int(v) for v in supports_true[j])
        est = set(int(v) for v in supports_est[j])
        total += 2 * len(sup | est)
        errors += 2 * len(sup - est)   # missed devices: all bits lost
        errors += 2 * len(est - sup)   # false alarms: full-length burst
        for dev in sup & est:
            matched.setdefault(dev, []).append(
                (_pair_value(tx_bits[j, dev]),
                 _pair_value(bits_est[j][dev])))
    rotations = range(4) if rotation_invariant else (0,)
    for dev, pairs in matched.items():
        best = None
        for r in rotations:
            e = 0
            for tx, est in pairs:
                rotated = _rotate_pair(est, r)
                e += bin(tx ^ rotated).count("1")
            best = e if best is None else min(best, e)
        errors += best
    if total == 0:
        return 0.0
    return errors / total


def frame_metrics(frame, supports_est, bits_est,
                  rotation_invariant: bool = False) -> dict:
    """Slot-averaged rho_d, accuracy, BER and false-alarm rate for a frame."""
    rho, acc, fa = [], [], []
    k = frame.codebook.num_devices
    for j in range(frame.num_slots):
        sup = frame.activity.supports[j]
        if len(sup):
            rho.append(detection_probability(sup, supports_est[j]))
            acc.append(identification_accuracy(sup, supports_est[j], len(sup)))
        fa.append(false_alarm_rate(sup, supports_est[j], k))
    ber = bit_error_rate(frame.bits, bits_est, frame.activity.supports,
                         supports_est, rotation_invariant=rotation_invariant)
    return {
        "rho_d": float(np.mean(rho)) if rho else float("nan"),
        "accuracy": float(np.mean(acc)) if acc else float("nan"),
        "ber": ber,
        "fa_rate": float(np.mean(fa)),
    }
