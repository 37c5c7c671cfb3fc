"""Backpropagation checked against central finite differences, plus the
dropout and training-dynamics properties that depend on correct gradients."""

import numpy as np
import pytest

from gfnoma.network import (NetworkParams, TrainConfig, backward_batch,
                            data_loss_batch, forward_batch)
from gfnoma.errors import StateError
from gfnoma.optim import AdamState, adam_step
from gfnoma.rng import RngStream

TINY = dict(d_in=4, width=4, layers=2, num_outputs=3, num_steps=2)
BATCH = 4
FD_STEP = 1e-5


def tiny_setup(head, seed=11, lam=1e-3, rho=0.0):
    theta = NetworkParams.initialize(num_steps=TINY["num_steps"],
                                     d_in=TINY["d_in"], width=TINY["width"],
                                     layers=TINY["layers"],
                                     num_outputs=TINY["num_outputs"],
                                     seed=seed)
    # jitter away from the symmetric init point so every tensor (including
    # batch-norm-cancelled biases) has a gradient of usable magnitude
    jit = RngStream.from_seed(999, 2)
    theta.set_flat(theta.flat() + 0.2 * (jit.uniform(theta.count()) - 0.5))
    cfg = TrainConfig(mode="train", rho_drop=rho, l2_lambda=lam,
                      head_mode=head)
    st = RngStream.from_seed(5, 1)
    x = st.gaussian(TINY["num_steps"] * BATCH * TINY["d_in"]).reshape(
        TINY["num_steps"], BATCH, TINY["d_in"])
    labels = (st.uniform(TINY["num_steps"] * BATCH * TINY["num_outputs"])
              < 0.4).astype(float).reshape(TINY["num_steps"], BATCH,
                                           TINY["num_outputs"])
    return theta, cfg, x, labels


def total_loss(theta, x, labels, cfg):
    p, _ = forward_batch(x, theta, cfg, update_running=False)
    return data_loss_batch(labels, p, cfg.head_mode) \
        + cfg.l2_lambda * theta.l2_norm_sq()


def finite_difference(theta, x, labels, cfg):
    flat = theta.flat()
    fd = np.empty(flat.size)
    for i in range(flat.size):
        v = flat.copy()
        v[i] += FD_STEP
        theta.set_flat(v)
        lp = total_loss(theta, x, labels, cfg)
        v[i] -= 2 * FD_STEP
        theta.set_flat(v)
        lm = total_loss(theta, x, labels, cfg)
        fd[i] = (lp - lm) / (2 * FD_STEP)
    theta.set_flat(flat)
    return fd


@pytest.mark.parametrize("head", ["sigmoid", "softmax"])
def test_gradients_match_finite_differences(head):
    theta, cfg, x, labels = tiny_setup(head)
    _, trace = forward_batch(x, theta, cfg, update_running=False)
    grads = backward_batch(trace, labels, theta, cfg)
    analytic = np.concatenate([grads[n].ravel() for n, _ in theta.tensors()])
    fd = finite_difference(theta, x, labels, cfg)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(analytic), 1e-8)
    assert rel.max() < 1e-4


def test_gradients_full_frame_mode():
    theta = NetworkParams.initialize(8, 4, 2, 3, 1, seed=21)
    jit = RngStream.from_seed(77, 2)
    theta.set_flat(theta.flat() + 0.2 * (jit.uniform(theta.count()) - 0.5))
    cfg = TrainConfig(mode="train", rho_drop=0.0, l2_lambda=1e-3,
                      input_mode="full-frame")
    st = RngStream.from_seed(6, 1)
    x = st.gaussian(1 * BATCH * 8).reshape(1, BATCH, 8)
    labels = (st.uniform(1 * BATCH * 3) < 0.4).astype(float).reshape(
        1, BATCH, 3)
    _, trace = forward_batch(x, theta, cfg, update_running=False)
    grads = backward_batch(trace, labels, theta, cfg)
    analytic = np.concatenate([grads[n].ravel() for n, _ in theta.tensors()])
    fd = finite_difference(theta, x, labels, cfg)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(analytic), 1e-8)
    assert rel.max() < 1e-4


def test_pure_l2_gradient_is_2_lambda_theta():
    theta, cfg, x, labels = tiny_setup("sigmoid", lam=0.37)
    _, trace = forward_batch(x, theta, cfg, update_running=False)
    grads = backward_batch(trace, labels, theta, cfg)
    cfg0 = TrainConfig(**{**cfg.__dict__, "l2_lambda": 0.0})
    grads0 = backward_batch(trace, labels, theta, cfg0)
    for name, arr in theta.tensors():
        delta = grads[name] - grads0[name]
        assert np.abs(delta - 2 * 0.37 * arr).max() < 1e-14


def test_fixed_dropout_mask_bitwise_deterministic():
    theta, cfg, x, labels = tiny_setup("sigmoid", rho=0.4)
    stream = RngStream.from_seed(44, 3)
    _, trace = forward_batch(x, theta, cfg, dropout_stream=stream,
                             update_running=False)
    g1 = backward_batch(trace, labels, theta, cfg)
    g2 = backward_batch(trace, labels, theta, cfg)
    for name in g1:
        assert np.array_equal(g1[name], g2[name])


def test_backward_rejects_foreign_or_inference_trace():
    theta, cfg, x, labels = tiny_setup("sigmoid")
    other = NetworkParams.initialize(num_steps=2, d_in=4, width=4, layers=2,
                                     num_outputs=3, seed=99)
    _, trace = forward_batch(x, theta, cfg, update_running=False)
    with pytest.raises(StateError):
        backward_batch(trace, labels, other, cfg)
    infer = TrainConfig(**{**cfg.__dict__, "mode": "inference"})
    _, trace2 = forward_batch(x, theta, infer)
    with pytest.raises(StateError):
        backward_batch(trace2, labels, theta, cfg)


def test_inverted_dropout_preserves_expectation():
    # mean of dropped-and-rescaled activations approaches the no-dropout
    # activations over many masks
    rho = 0.3
    stream = RngStream.from_seed(7, 4)
    act = np.abs(RngStream(3).gaussian(20)) + 1.0
    acc = np.zeros_like(act)
    draws = 10 ** 4
    for _ in range(draws):
        mask = (stream.uniform(act.size) >= rho) / (1 - rho)
        acc += act * mask
    rel = np.abs(acc / draws - act) / act
    assert rel.max() < 0.02


def test_weight_decay_shrinks_parameters_on_null_data():
    # pure-decay regime: zero data gradient, only the l2 term drives Adam
    theta, cfg, _, _ = tiny_setup("sigmoid", lam=1e-3)
    adam = AdamState.for_params(theta)
    norm0 = np.linalg.norm(theta.flat())
    for _ in range(200):
        grads = {n: 2 * cfg.l2_lambda * a for n, a in theta.tensors()}
        adam_step(theta, grads, adam)
    assert np.linalg.norm(theta.flat()) < norm0
