import numpy as np
import pytest

from gfnoma.errors import InputError
from gfnoma.metrics import (bit_error_rate, detection_probability,
                            false_alarm_rate, frame_metrics,
                            identification_accuracy)


class TestDetectionProbability:
    def test_full_detection(self):
        assert detection_probability({1, 2, 3}, {1, 2, 3, 9}) == 1.0

    def test_half_detection(self):
        assert detection_probability({1, 2, 3, 4}, {1, 2, 7}) == 0.5

    def test_no_overlap(self):
        assert detection_probability({1, 2}, {3, 4}) == 0.0

    def test_empty_support_undefined(self):
        with pytest.raises(InputError):
            detection_probability(set(), {1})


class TestAccuracy:
    def test_perfect(self):
        assert identification_accuracy({2, 4}, {2, 4}, 2) == 100.0

    def test_disjoint(self):
        assert identification_accuracy({1, 2}, {3, 4}, 2) == 0.0

    def test_seventeen_of_twenty(self):
        est = set(range(17)) | {100, 101, 102}
        assert identification_accuracy(set(range(20)), est, 20) == 85.0

    def test_zero_s_undefined(self):
        with pytest.raises(InputError):
            identification_accuracy(set(), set(), 0)

    def test_matches_rho_d_scaled(self):
        sup, est = {1, 2, 3, 4, 5}, {2, 3, 9}
        assert identification_accuracy(sup, est, 5) \
            == pytest.approx(100 * detection_probability(sup, est))


class TestFalseAlarm:
    def test_no_false_alarms(self):
        assert false_alarm_rate({1, 2}, {1, 2}, 10) == 0.0

    def test_counts_only_inactive(self):
        assert false_alarm_rate({0}, {0, 1, 2}, 5) == pytest.approx(0.5)


def _bits_for(pairs):
    """pairs: {(slot, device): (b0, b1)} -> estimate dicts per slot."""
    slots = 1 + max(s for s, _ in pairs)
    out = [dict() for _ in range(slots)]
    for (s, d), bits in pairs.items():
        out[s][d] = np.array(bits, dtype=np.uint8)
    return out


class TestBitErrorRate:
    def test_perfect_decode(self):
        tx = np.zeros((2, 3, 2), dtype=np.uint8)
        tx[0, 1] = [1, 0]
        tx[1, 2] = [0, 1]
        est = _bits_for({(0, 1): (1, 0), (1, 2): (0, 1)})
        sup = [[1], [2]]
        assert bit_error_rate(tx, est, sup, sup) == 0.0

    def test_empty_estimate_total_loss(self):
        tx = np.zeros((2, 3, 2), dtype=np.uint8)
        sup_true = [[0, 1], [1, 2]]
        sup_est = [[], []]
        est = [dict(), dict()]
        assert bit_error_rate(tx, est, sup_true, sup_est) == 1.0

    def test_single_flip_among_280(self):
        # S=20 devices, J=7 slots, 2 bits per symbol -> 280 bits
        s, j = 20, 7
        tx = np.zeros((j, s, 2), dtype=np.uint8)
        sup = [list(range(s)) for _ in range(j)]
        est = [{d: np.array([0, 0], dtype=np.uint8) for d in range(s)}
               for _ in range(j)]
        est[3][7] = np.array([0, 1], dtype=np.uint8)
        assert bit_error_rate(tx, est, sup, sup) \
            == pytest.approx(1.0 / 280.0)

    def test_false_alarm_full_burst_penalty(self):
        tx = np.zeros((1, 4, 2), dtype=np.uint8)
        sup_true = [[0]]
        sup_est = [[0, 3]]
        est = _bits_for({(0, 0): (0, 0), (0, 3): (0, 0)})
        # denominator 4 bits (union of 2 devices), numerator 2 (false alarm)
        assert bit_error_rate(tx, est, sup_true, sup_est) == 0.5

    def test_bounded_by_one(self):
        tx = np.ones((2, 5, 2), dtype=np.uint8)
        sup_true = [[0, 1, 2], [1, 2, 3]]
        sup_est = [[3, 4], [0, 4]]
        est = [
            {3: np.zeros(2, np.uint8), 4: np.zeros(2, np.uint8)},
            {0: np.zeros(2, np.uint8), 4: np.zeros(2, np.uint8)},
        ]
        ber = bit_error_rate(tx, est, sup_true, sup_est)
        assert 0.0 <= ber <= 1.0

    def test_rotation_invariant_fixes_common_rotation(self):
        # decoded bits are the tx bits rotated by one constellation step for
        # every slot of the device; a single per-device rotation repairs it
        tx = np.zeros((2, 2, 2), dtype=np.uint8)
        tx[0, 0] = [0, 0]
        tx[1, 0] = [1, 1]
        rot = {(0, 0): 0, (1, 1): 3}  # 00->01, 11->10 under one rotation
        est = _bits_for({(0, 0): (0, 1), (1, 0): (1, 0)})
        sup = [[0], [0]]
        assert bit_error_rate(tx, est, sup, sup) > 0.0
        assert bit_error_rate(tx, est, sup, sup,
                              rotation_invariant=True) == 0.0

    def test_rotation_invariant_does_not_fix_inconsistent(self):
        # two slots rotated by different amounts cannot both be repaired
        tx = np.zeros((2, 2, 2), dtype=np.uint8)
        est = _bits_for({(0, 0): (0, 1), (1, 0): (1, 0)})
        sup = [[0], [0]]
        assert bit_error_rate(tx, est, sup, sup,
                              rotation_invariant=True) > 0.0


class TestFrameMetrics:
    def test_keys_and_ranges(self):
        from gfnoma import signal as sg

        cb = sg.generate_codebook(6, 4, seed=1)
        act = sg.generate_activity(6, 2, 3, 0.5, seed=1)
        ch = sg.generate_channel(6, 4, 3, seed=1)
        fr = sg.synthesize_frame(cb, act, ch, sg.random_bits(6, 3, act, 1),
                                 10.0, seed=1)
        est_sup = act.supports
        bits = [{int(d): fr.bits[j, d] for d in act.supports[j]}
                for j in range(3)]
        m = frame_metrics(fr, est_sup, bits)
        assert m["rho_d"] == 1.0
        assert m["accuracy"] == 100.0
        assert m["ber"] == 0.0
        assert m["fa_rate"] == 0.0
