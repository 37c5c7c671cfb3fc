import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfnoma.errors import ConfigError, InputError, NumericError
from gfnoma.kernels import lstm_seq_forward
from gfnoma.network import (BN_EPS, LstmCellParams, NetworkParams,
                            TrainConfig, attention_forward, batchnorm_forward,
                            bilstm_layer_forward, forward_batch, loss,
                            lstm_cell_forward, network_forward, param_count)
from gfnoma.rng import RngStream

# frozen regression value: init seed 97, input stream (31415, 1)
GOLDEN_TINY_P = np.array([
    [0.4611965228001616, 0.44762041645871775, 0.5482821320842494],
    [0.5112012397745302, 0.434221862621209, 0.5363924584259497],
])


def _cell(d_in, width, seed=1, scale=0.3):
    stream = RngStream(seed)
    return LstmCellParams(
        w_x=scale * stream.gaussian(d_in * 4 * width).reshape(d_in, 4 * width),
        w_h=scale * stream.gaussian(width * 4 * width).reshape(width, 4 * width),
        b=scale * stream.gaussian(4 * width))


class TestLstmCell:
    def test_zero_parameters_zero_state(self):
        p = LstmCellParams(w_x=np.zeros((3, 8)), w_h=np.zeros((2, 8)),
                           b=np.zeros(8))
        h, c = lstm_cell_forward(np.array([1.0, -2.0, 3.0]), np.zeros(2),
                                 np.zeros(2), p)
        assert np.array_equal(h, np.zeros(2))
        assert np.array_equal(c, np.zeros(2))

    def test_scalar_hand_oracle(self):
        # alpha = 1, d_in = 1, hand-picked weights
        wx = np.array([[0.5, -0.3, 0.8, 0.2]])
        wh = np.array([[0.1, 0.4, -0.6, 0.7]])
        b = np.array([0.05, -0.1, 0.2, 0.0])
        p = LstmCellParams(w_x=wx, w_h=wh, b=b)
        x, h0, c0 = 0.7, -0.2, 0.4

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        gi = sig(0.5 * x + 0.1 * h0 + 0.05)
        gf = sig(-0.3 * x + 0.4 * h0 - 0.1)
        gg = np.tanh(0.8 * x - 0.6 * h0 + 0.2)
        go = sig(0.2 * x + 0.7 * h0 + 0.0)
        c_exp = gf * c0 + gi * gg
        h_exp = go * np.tanh(c_exp)
        h, c = lstm_cell_forward(np.array([x]), np.array([h0]),
                                 np.array([c0]), p)
        assert abs(h[0] - h_exp) < 1e-12
        assert abs(c[0] - c_exp) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_output_bounded_by_one(self, seed):
        stream = RngStream(seed)
        p = _cell(3, 4, seed=seed, scale=2.0)
        h, _ = lstm_cell_forward(3 * stream.gaussian(3),
                                 3 * stream.gaussian(4),
                                 3 * stream.gaussian(4), p)
        assert np.all(np.abs(h) <= 1.0)

    def test_shape_mismatch(self):
        p = _cell(3, 4)
        with pytest.raises(InputError):
            lstm_cell_forward(np.zeros(2), np.zeros(4), np.zeros(4), p)


class TestBiLstmLayer:
    def test_output_width_independent_of_length(self):
        fwd, bwd = _cell(5, 6, 1), _cell(5, 6, 2)
        wz = 0.2 * RngStream(3).gaussian(12 * 6).reshape(12, 6)
        bz = np.zeros(6)
        for steps in (1, 4, 9):
            out, _, _ = bilstm_layer_forward(
                RngStream(steps).gaussian(steps * 5).reshape(steps, 5),
                fwd, bwd, wz, bz)
            assert out.shape == (steps, 6)

    def test_forward_half_matches_unidirectional(self):
        fwd, bwd = _cell(5, 6, 1), _cell(5, 6, 2)
        wz = 0.2 * RngStream(3).gaussian(12 * 6).reshape(12, 6)
        seq = RngStream(4).gaussian(7 * 5).reshape(7, 5)
        _, h_f, _ = bilstm_layer_forward(seq, fwd, bwd, wz, np.zeros(6))
        solo, _, _ = lstm_seq_forward(
            np.ascontiguousarray(seq[:, None, :]), fwd.w_x, fwd.w_h, fwd.b,
            np.zeros((1, 6)), np.zeros((1, 6)))
        assert np.abs(h_f - solo[:, 0, :]).max() < 1e-14

    def test_time_reversal_symmetry(self):
        cell = _cell(5, 6, 9)
        wz = 0.1 * RngStream(3).gaussian(12 * 6).reshape(12, 6)
        seq = RngStream(8).gaussian(5 * 5).reshape(5, 5)
        _, h_f, h_b = bilstm_layer_forward(seq, cell, cell, wz, np.zeros(6))
        _, h_f_r, h_b_r = bilstm_layer_forward(seq[::-1].copy(), cell, cell,
                                               wz, np.zeros(6))
        assert np.abs(h_f - h_b_r[::-1]).max() < 1e-14
        assert np.abs(h_b - h_f_r[::-1]).max() < 1e-14

    def test_empty_sequence_rejected(self):
        fwd, bwd = _cell(3, 2), _cell(3, 2)
        with pytest.raises(InputError):
            bilstm_layer_forward(np.zeros((0, 3)), fwd, bwd,
                                 np.zeros((4, 2)), np.zeros(2))


class TestBatchNorm:
    def test_normalization_identity(self):
        batch = RngStream(5).gaussian(64 * 3).reshape(64, 3) * 2.0 + 1.0
        scale = np.array([1.5, -0.5, 2.0])
        shift = np.array([0.3, 0.0, -1.0])
        out, _, _ = batchnorm_forward(batch, scale, shift, mode="train")
        assert np.abs(out.mean(axis=0) - shift).max() < 1e-6
        assert np.abs(out.std(axis=0) - np.abs(scale)).max() < 1e-6

    def test_constant_batch_zeroed(self):
        batch = np.full((8, 2), 3.7)
        out, _, _ = batchnorm_forward(batch, np.ones(2), np.zeros(2),
                                      mode="train")
        assert np.abs(out).max() < 1e-6

    def test_hand_oracle_3x2(self):
        batch = np.array([[1.0, 4.0], [2.0, 6.0], [6.0, 5.0]])
        scale = np.array([2.0, 0.5])
        shift = np.array([-1.0, 3.0])
        mu = batch.mean(axis=0)
        var = batch.var(axis=0)
        expected = scale * (batch - mu) / np.sqrt(var + BN_EPS) + shift
        out, _, _ = batchnorm_forward(batch, scale, shift, mode="train")
        assert np.abs(out - expected).max() < 1e-12

    def test_single_sample_training_rejected(self):
        with pytest.raises(InputError):
            batchnorm_forward(np.ones((1, 3)), np.ones(3), np.zeros(3),
                              mode="train")

    def test_inference_uses_running_stats(self):
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        batch = np.array([[3.0, 0.0]])
        out, _, _ = batchnorm_forward(batch, np.ones(2), np.zeros(2),
                                      mode="inference", running_mean=rm,
                                      running_var=rv)
        assert np.allclose(out, [[1.0, 2.0]], atol=1e-7)


class TestAttention:
    def _params(self, width, seed=6):
        stream = RngStream(seed)
        return (0.4 * stream.gaussian(width * width).reshape(width, width),
                0.4 * stream.gaussian(width * width).reshape(width, width),
                0.1 * stream.gaussian(width),
                stream.gaussian(width))

    def test_equal_scores_uniform_weights(self):
        w = 3
        history = np.tile(np.array([0.3, -0.2, 0.9]), (5, 1))
        wa, za, ba, wrel = self._params(w)
        out, zeta, _ = attention_forward(history, history[0], wa, za, ba,
                                         wrel)
        assert np.abs(zeta - 0.2).max() < 1e-12
        assert np.allclose(out, history[0], atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(1, 8))
    def test_weights_sum_to_one(self, seed, steps):
        stream = RngStream(seed)
        history = stream.gaussian(steps * 4).reshape(steps, 4)
        wa, za, ba, wrel = self._params(4, seed=seed + 1)
        _, zeta, _ = attention_forward(history, history[0], wa, za, ba, wrel)
        assert abs(zeta.sum() - 1.0) < 1e-12

    def test_two_step_hand_oracle(self):
        # scalar width: every parameter is a number
        wa = np.array([[0.7]])
        za = np.array([[-0.4]])
        ba = np.array([0.2])
        wrel = np.array([1.3])
        history = np.array([[0.5], [-1.0]])
        current = np.array([0.5])
        s0 = 1.3 * np.tanh(0.7 * 0.5 - 0.4 * 0.5 + 0.2)
        s1 = 1.3 * np.tanh(0.7 * -1.0 - 0.4 * 0.5 + 0.2)
        z = np.exp([s0, s1])
        z = z / z.sum()
        expected = z[0] * 0.5 + z[1] * -1.0
        out, _, _ = attention_forward(history, current, wa, za, ba, wrel)
        assert abs(out[0] - expected) < 1e-12

    def test_empty_history_rejected(self):
        wa, za, ba, wrel = self._params(2)
        with pytest.raises(InputError):
            attention_forward(np.zeros((0, 2)), np.zeros(2), wa, za, ba,
                              wrel)


class TestNetworkForward:
    def _tiny(self, head="sigmoid", seed=97):
        theta = NetworkParams.initialize(4, 4, 2, 3, 2, seed=seed)
        cfg = TrainConfig(mode="inference", rho_drop=0.0, head_mode=head)
        return theta, cfg

    def test_inference_deterministic(self):
        theta, cfg = self._tiny()
        x = RngStream(1).gaussian(8).reshape(2, 4)
        p1, _ = network_forward(x, theta, cfg)
        p2, _ = network_forward(x, theta, cfg)
        assert np.array_equal(p1, p2)

    def test_softmax_normalization(self):
        theta, cfg = self._tiny(head="softmax")
        x = RngStream(2).gaussian(8).reshape(2, 4)
        p, _ = network_forward(x, theta, cfg)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9

    def test_sigmoid_outputs_in_unit_interval(self):
        theta, cfg = self._tiny()
        x = 5 * RngStream(3).gaussian(8).reshape(2, 4)
        p, _ = network_forward(x, theta, cfg)
        assert np.all((p > 0) & (p < 1))

    def test_golden_tiny_output_frozen(self):
        theta, cfg = self._tiny()
        x = RngStream.from_seed(31415, 1).gaussian(8).reshape(2, 4)
        p, _ = network_forward(x, theta, cfg)
        assert np.abs(p - GOLDEN_TINY_P).max() < 1e-10

    def test_training_needs_batch(self):
        theta, _ = self._tiny()
        cfg = TrainConfig(mode="train", rho_drop=0.0)
        with pytest.raises(InputError):
            network_forward(RngStream(1).gaussian(8).reshape(2, 4), theta,
                            cfg)

    def test_nan_input_reports_stage(self):
        theta, cfg = self._tiny()
        x = np.full((2, 4), np.nan)
        with pytest.raises(NumericError) as err:
            network_forward(x, theta, cfg)
        assert "stage" in str(err.value)

    def test_shape_mismatch_rejected(self):
        theta, cfg = self._tiny()
        with pytest.raises(InputError):
            network_forward(np.zeros((2, 5)), theta, cfg)

    def test_dropout_requires_stream(self):
        theta, _ = self._tiny()
        cfg = TrainConfig(mode="train", rho_drop=0.5)
        x = RngStream(1).gaussian(4 * 2 * 4).reshape(2, 4, 4)
        with pytest.raises(InputError):
            forward_batch(x, theta, cfg, dropout_stream=None)


class TestLoss:
    def test_perfect_prediction_zero(self):
        p = np.zeros(5)
        p[2] = 1.0
        q = np.full(5, 1e-12)
        q[2] = 1.0
        assert loss(p, q, None, 0.0, head_mode="softmax") \
            == pytest.approx(0.0, abs=1e-9)

    def test_uniform_softmax_value(self):
        k = 200
        p = np.zeros(k)
        p[7] = 1.0
        q = np.full(k, 1.0 / k)
        expected = np.log(k) / k
        assert loss(p, q, None, 0.0, head_mode="softmax") \
            == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.02649, abs=5e-6)

    def test_matches_scalar_loop_oracle(self):
        stream = RngStream(9)
        k = 17
        p = (stream.uniform(k) < 0.3).astype(float)
        q = np.clip(stream.uniform(k), 1e-6, 1 - 1e-6)
        for head in ("softmax", "sigmoid"):
            expected = 0.0
            for i in range(k):
                if head == "softmax":
                    expected += -p[i] * np.log(q[i]) / k
                else:
                    expected += -(p[i] * np.log(q[i])
                                  + (1 - p[i]) * np.log(1 - q[i])) / k
            assert loss(p, q, None, 0.0, head_mode=head) \
                == pytest.approx(expected, rel=1e-12)

    def test_l2_term_uses_every_tensor(self):
        theta = NetworkParams.initialize(4, 4, 2, 3, 2, seed=1)
        p = np.zeros(3)
        p[0] = 1.0
        q = np.full(3, 1.0 / 3)
        lam = 0.01
        base = loss(p, q, None, 0.0, head_mode="softmax")
        full = loss(p, q, theta, lam, head_mode="softmax")
        assert full == pytest.approx(base + lam * theta.l2_norm_sq(),
                                     rel=1e-12)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            loss(np.zeros(3), np.full(3, 0.5), None, -0.1)


class TestParamCount:
    @pytest.mark.parametrize("dims", [(4, 4, 2, 3, 2), (10, 8, 1, 5, 7),
                                      (50, 16, 3, 12, 7)])
    def test_closed_form_matches_actual(self, dims):
        d_in, width, layers, k, steps = dims
        theta = NetworkParams.initialize(d_in, width, layers, k, steps,
                                         seed=0)
        assert theta.count() == param_count(d_in, width, layers, k)

    def test_tensors_registered_exactly_once(self):
        theta = NetworkParams.initialize(4, 4, 2, 3, 2, seed=0)
        names = [n for n, _ in theta.tensors()]
        ids = [id(a) for _, a in theta.tensors()]
        assert len(names) == len(set(names))
        assert len(ids) == len(set(ids))

    def test_forget_gate_bias_init(self):
        theta = NetworkParams.initialize(4, 4, 2, 3, 2, seed=0)
        for layer in theta.hidden:
            assert np.all(layer.fwd.b[4:8] == 1.0)
            assert np.all(layer.fwd.b[:4] == 0.0)


class TestFullFrameMode:
    def test_single_step_forward(self):
        theta = NetworkParams.initialize(12, 4, 2, 3, 1, seed=3)
        cfg = TrainConfig(mode="inference", rho_drop=0.0,
                          input_mode="full-frame")
        p, _ = network_forward(RngStream(4).gaussian(12).reshape(1, 12),
                               theta, cfg)
        assert p.shape == (1, 3)
