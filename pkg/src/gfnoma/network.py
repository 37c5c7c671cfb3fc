"""Attention-based BiLSTM active-user detector, implemented from scratch.

Architecture (per-slot input mode, T = J steps of width 2N; a full-frame
mode uses one step of width 2NJ):

    input affine -> batchnorm -> relu -> dropout                   (stage 0)
    L hidden layers, each fed the SUM of every earlier stage's
    post-dropout output:
        BiLSTM (4-gate cells both directions) -> linear combine
        -> batchnorm -> relu -> dropout                            (stages 1..L)
    additive attention over the last hidden layer's recent steps
    output affine over (sum of hidden outputs with the last layer
    replaced by its attended version) -> sigmoid or softmax head

Batch-norm follows the scale-then-shift convention of the reference design:
`scale * xhat + shift`, with statistics taken per (step, feature) across the
batch.  Dropout is inverted (masks are 0 or 1/(1-rho)) so inference needs no
rescaling.  All gradients are hand-derived; `network_backward` returns a
gradient for every registered tensor.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, NumericError, StateError
from .kernels import lstm_seq_forward, lstm_seq_backward
from .rng import RngStream

BN_EPS = 1e-8


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class LstmCellParams:
    """One 4-gate cell. Weights are stored pre-transposed for row-major
    matmuls: w_x is (d_in, 4*width), w_h is (width, 4*width), bias (4*width,).
    Gate order along the last axis is input | forget | candidate | output."""
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    @property
    def width(self) -> int:
        return self.w_h.shape[0]


@dataclass
class BiLstmLayerParams:
    fwd: LstmCellParams
    bwd: LstmCellParams
    w_combine: np.ndarray  # (2*width, width)
    b_combine: np.ndarray  # (width,)


@dataclass
class TrainConfig:
    batch_size: int = 20
    rho_drop: float = 0.3
    l2_lambda: float = 1e-4
    tau: float = 0.5
    mode: str = "inference"           # "train" | "inference"
    head_mode: str = "sigmoid"        # "sigmoid" | "softmax"
    validation_split: float = 0.2
    attention_span: Optional[int] = None  # None -> all available steps
    input_mode: str = "per-slot"      # "per-slot" | "full-frame"
    grad_clip: float = 5.0            # global-norm clip; <=0 disables
    bn_momentum: float = 0.1
    adam_bias_correction: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho_drop < 1.0:
            raise ConfigError(f"rho_drop must be in [0, 1), got {self.rho_drop}")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")
        if self.head_mode not in ("sigmoid", "softmax"):
            raise ConfigError(f"unknown head_mode {self.head_mode!r}")
        if self.input_mode not in ("per-slot", "full-frame"):
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if self.mode not in ("train", "inference"):
            raise ConfigError(f"unknown mode {self.mode!r}")


def _xavier(stream: RngStream, rows: int, cols: int, fan_in: int,
            fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * stream.uniform(rows * cols) - 1.0).reshape(rows, cols) * a


def param_count(d_in: int, width: int, layers: int, num_outputs: int) -> int:
    """Closed-form trainable parameter count.

    input stage: width*d_in + width
    batch norm:  2*width*(layers+1)
    per hidden layer: two cells 2*(4*width*width + 4*width*width + 4*width)
                      plus combine 2*width*width + width  -> 18 w^2 + 9 w
    attention:   2*width^2 + 2*width
    output head: num_outputs*width + num_outputs
    """
    w = width
    return (w * d_in + w
            + 2 * w * (layers + 1)
            + layers * (18 * w * w + 9 * w)
            + 2 * w * w + 2 * w
            + num_outputs * w + num_outputs)


@dataclass
class NetworkParams:
    """All trainable tensors plus batch-norm running statistics."""
    d_in: int
    width: int
    layers: int
    num_outputs: int
    num_steps: int
    w_in: np.ndarray
    b_in: np.ndarray
    bn_scale: list   # (layers+1) arrays (width,)
    bn_shift: list
    hidden: list     # layers BiLstmLayerParams
    attn_wa: np.ndarray
    attn_za: np.ndarray
    attn_ba: np.ndarray
    attn_wrel: np.ndarray
    w_out: np.ndarray  # (width, num_outputs)
    b_out: np.ndarray
    bn_run_mean: list = field(default_factory=list)  # (num_steps, width)
    bn_run_var: list = field(default_factory=list)

    @classmethod
    def initialize(cls, d_in: int, width: int, layers: int, num_outputs: int,
                   num_steps: int, seed: int = 0) -> "NetworkParams":
        """Uniform +-sqrt(6/(fan_in+fan_out)) init; forget-gate bias 1."""
        if min(d_in, width, layers, num_outputs, num_steps) < 1:
            raise ConfigError("all network dimensions must be >= 1")
        st = RngStream.from_seed(seed, 6)  # STREAM_INIT

        def cell(din):
            wx = _xavier(st, din, 4 * width, din, width)
            wh = _xavier(st, width, 4 * width, width, width)
            b = np.zeros(4 * width)
            b[width:2 * width] = 1.0
            return LstmCellParams(w_x=wx, w_h=wh, b=b)

        hidden = []
        for _ in range(layers):
            hidden.append(BiLstmLayerParams(
                fwd=cell(width), bwd=cell(width),
                w_combine=_xavier(st, 2 * width, width, 2 * width, width),
                b_combine=np.zeros(width)))
        return cls(
            d_in=d_in, width=width, layers=layers, num_outputs=num_outputs,
            num_steps=num_steps,
            w_in=_xavier(st, d_in, width, d_in, width),
            b_in=np.zeros(width),
            bn_scale=[np.ones(width) for _ in range(layers + 1)],
            bn_shift=[np.zeros(width) for _ in range(layers + 1)],
            hidden=hidden,
            attn_wa=_xavier(st, width, width, width, width),
            attn_za=_xavier(st, width, width, width, width),
            attn_ba=np.zeros(width),
            attn_wrel=_xavier(st, width, 1, width, 1).ravel(),
            w_out=_xavier(st, width, num_outputs, width, num_outputs),
            b_out=np.zeros(num_outputs),
            bn_run_mean=[np.zeros((num_steps, width)) for _ in range(layers + 1)],
            bn_run_var=[np.ones((num_steps, width)) for _ in range(layers + 1)],
        )

    def tensors(self):
        """Ordered (name, array) pairs of every trainable tensor, each
        registered exactly once."""
        out = [("w_in", self.w_in), ("b_in", self.b_in)]
        for l in range(self.layers + 1):
            out.append((f"bn{l}_scale", self.bn_scale[l]))
            out.append((f"bn{l}_shift", self.bn_shift[l]))
        for l, layer in enumerate(self.hidden, start=1):
            out.append((f"h{l}_fwd_wx", layer.fwd.w_x))
            out.append((f"h{l}_fwd_wh", layer.fwd.w_h))
            out.append((f"h{l}_fwd_b", layer.fwd.b))
            out.append((f"h{l}_bwd_wx", layer.bwd.w_x))
            out.append((f"h{l}_bwd_wh", layer.bwd.w_h))
            out.append((f"h{l}_bwd_b", layer.bwd.b))
            out.append((f"h{l}_comb_w", layer.w_combine))
            out.append((f"h{l}_comb_b", layer.b_combine))
        out.append(("attn_wa", self.attn_wa))
        out.append(("attn_za", self.attn_za))
        out.append(("attn_ba", self.attn_ba))
        out.append(("attn_wrel", self.attn_wrel))
        out.append(("w_out", self.w_out))
        out.append(("b_out", self.b_out))
        return out

    def count(self) -> int:
        return sum(int(np.prod(a.shape)) for _, a in self.tensors())

    def l2_norm_sq(self) -> float:
        return float(sum(np.sum(a * a) for _, a in self.tensors()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.tensors()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for _, a in self.tensors():
            n = a.size
            a[...] = vec[pos:pos + n].reshape(a.shape)
            pos += n
        if pos != vec.size:
            raise InputError("flat vector length mismatch")


# ---------------------------------------------------------------------------
# spec-level single-sample operations


def lstm_cell_forward(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                      params: LstmCellParams):
    """One step of the 4-gate cell: c = f*c_prev + i*g, h = o*tanh(c)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    w = params.width
    if x_t.shape != (params.w_x.shape[0],) or h_prev.shape != (w,) \
            or c_prev.shape != (w,):
        raise InputError("lstm_cell_forward shape mismatch")
    raw = x_t @ params.w_x + h_prev @ params.w_h + params.b
    gi = 1.0 / (1.0 + np.exp(-raw[:w]))
    gf = 1.0 / (1.0 + np.exp(-raw[w:2 * w]))
    gg = np.tanh(raw[2 * w:3 * w])
    go = 1.0 / (1.0 + np.exp(-raw[3 * w:]))
    c = gf * c_prev + gi * gg
    h = go * np.tanh(c)
    return h, c


def bilstm_layer_forward(seq: np.ndarray, fwd: LstmCellParams,
                         bwd: LstmCellParams, w_combine: np.ndarray,
                         b_combine: np.ndarray, activation: str = "relu"):
    """Bidirectional pass over an unbatched sequence (T, d_in).

    Returns (out, h_fwd, h_bwd): out[t] = act(W_z [h_fwd(t) || h_bwd(t)] + b_z)
    where the backward cell consumes the time-reversed sequence.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InputError("sequence must be (T >= 1, d_in)")
    x = np.ascontiguousarray(seq[:, None, :])
    zeros = np.zeros((1, fwd.width))
    h_f, _, _ = lstm_seq_forward(x, fwd.w_x, fwd.w_h, fwd.b, zeros, zeros)
    x_rev = np.ascontiguousarray(seq[::-1, None, :])
    h_b_rev, _, _ = lstm_seq_forward(x_rev, bwd.w_x, bwd.w_h, bwd.b,
                                     zeros, zeros)
    h_f = h_f[:, 0, :]
    h_b = h_b_rev[::-1, 0, :]
    pre = np.concatenate([h_f, h_b], axis=1) @ w_combine + b_combine
    if activation == "relu":
        out = np.maximum(pre, 0.0)
    elif activation == "tanh":
        out = np.tanh(pre)
    elif activation == "identity":
        out = pre
    else:
        raise ConfigError(f"unknown activation {activation!r}")
    return out, h_f, h_b


def batchnorm_forward(batch: np.ndarray, scale: np.ndarray, shift: np.ndarray,
                      mode: str = "train", running_mean=None, running_var=None,
                      momentum: float = 0.1):
    """Feature-wise batch normalization of one (B, width) group.

    Training mode normalizes with batch statistics and returns updated
    running statistics; inference mode normalizes with the running ones.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise InputError("batch must be 2-D (B, width)")
    if mode == "train":
        if batch.shape[0] < 2:
            raise InputError("batch statistics need at least 2 samples")
        mu = batch.mean(axis=0)
        var = batch.var(axis=0)
        if running_mean is None:
            running_mean = np.zeros_like(mu)
            running_var = np.ones_like(var)
        running_mean = (1 - momentum) * running_mean + momentum * mu
        running_var = (1 - momentum) * running_var + momentum * var
    elif mode == "inference":
        if running_mean is None or running_var is None:
            raise InputError("inference mode requires running statistics")
        mu, var = running_mean, running_var
    else:
        raise ConfigError(f"unknown batchnorm mode {mode!r}")
    xhat = (batch - mu) / np.sqrt(var + BN_EPS)
    return scale * xhat + shift, running_mean, running_var


def attention_forward(history: np.ndarray, current: np.ndarray, w_a, z_a,
                      b_a, w_rel):
    """Additive attention over a (steps, width) history, most recent first.

    score_k = w_rel . tanh(W_a history[k] + Z_a current + b_a); the output is
    the softmax-weighted sum of the history rows.
    Returns (context, weights, scores).
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] < 1:
        raise InputError("history must be (steps >= 1, width)")
    current = np.asarray(current, dtype=np.float64)
    e = np.tanh(history @ w_a + current @ z_a + b_a)
    scores = e @ w_rel
    m = scores.max()
    ez = np.exp(scores - m)
    zeta = ez / ez.sum()
    return zeta @ history, zeta, scores


# ---------------------------------------------------------------------------
# full network forward/backward (batched)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, cached by a training-mode forward."""
    theta: NetworkParams
    training: bool
    head_mode: str
    x: np.ndarray                 # (T, B, d_in)
    masks: list                   # per stage (T, B, w) or None
    pre_bn: list                  # per stage (T, B, w)
    xhat: list
    bn_var: list                  # per stage (T, w)
    relu_out: list
    z_post: list                  # post-dropout stage outputs
    layer_in: list                # per hidden layer summed input
    lstm_fwd: list                # (h_seq, c_seq, gates)
    lstm_bwd: list                # on reversed input
    concat: list
    attn_spans: list
    attn_e: list                  # per t (span, B, w)
    attn_zeta: list               # per t (span, B)
    head_in: np.ndarray
    z_out: np.ndarray
    p_hat: np.ndarray


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {where}")


def _bn_train_batch(a, scale, shift):
    mu = a.mean(axis=1)
    var = a.var(axis=1)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mu[:, None, :]) * inv[:, None, :]
    return scale * xhat + shift, xhat, mu, var


def _bn_infer_batch(a, scale, shift, rmean, rvar):
    inv = 1.0 / np.sqrt(rvar + BN_EPS)
    xhat = (a - rmean[:, None, :]) * inv[:, None, :]
    return scale * xhat + shift, xhat


def forward_batch(x: np.ndarray, theta: NetworkParams, cfg: TrainConfig,
                  dropout_stream: Optional[RngStream] = None,
                  update_running: bool = True):
    """Batched forward pass. x: (T, B, d_in). Returns (p_hat (T,B,K), trace)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InputError("input must be (T, B, d_in)")
    T, B, d = x.shape
    if d != theta.d_in or T != theta.num_steps:
        raise InputError(f"input ({T} steps, width {d}) does not match the "
                         f"network ({theta.num_steps} steps, {theta.d_in})")
    training = cfg.mode == "train"
    if training and B < 2:
        raise InputError("training mode needs batch size >= 2 for batch norm")
    if training and cfg.rho_drop > 0 and dropout_stream is None:
        raise InputError("training mode with dropout needs an RNG stream")
    w = theta.width
    L = theta.layers
    masks, pre_bn, xhats, bn_vars, relus, z_post = [], [], [], [], [], []
    layer_in, lstm_f, lstm_b, concats = [], [], [], []

    def stage_tail(a, l):
        _check_finite(a, f"stage {l} pre-batchnorm")
        if training:
            out, xh, mu, var = _bn_train_batch(a, theta.bn_scale[l],
                                               theta.bn_shift[l])
            if update_running:
                m = cfg.bn_momentum
                theta.bn_run_mean[l][...] = (1 - m) * theta.bn_run_mean[l] + m * mu
                theta.bn_run_var[l][...] = (1 - m) * theta.bn_run_var[l] + m * var
        else:
            out, xh = _bn_infer_batch(a, theta.bn_scale[l], theta.bn_shift[l],
                                      theta.bn_run_mean[l], theta.bn_run_var[l])
            var = theta.bn_run_var[l]
        r = np.maximum(out, 0.0)
        if training and cfg.rho_drop > 0:
            u = dropout_stream.uniform(T * B * w).reshape(T, B, w)
            mask = (u >= cfg.rho_drop) / (1.0 - cfg.rho_drop)
            z = r * mask
        else:
            mask = None
            z = r
        pre_bn.append(a)
        xhats.append(xh)
        bn_vars.append(var)
        relus.append(r)
        masks.append(mask)
        z_post.append(z)
        return z

    a0 = x @ theta.w_in + theta.b_in
    acc = stage_tail(a0, 0).copy()
    zeros = np.zeros((B, w))
    for l in range(1, L + 1):
        p = theta.hidden[l - 1]
        u = np.ascontiguousarray(acc)
        layer_in.append(u)
        hf, cf, gf = lstm_seq_forward(u, p.fwd.w_x, p.fwd.w_h, p.fwd.b,
                                      zeros, zeros)
        u_rev = np.ascontiguousarray(u[::-1])
        hb_r, cb_r, gb_r = lstm_seq_forward(u_rev, p.bwd.w_x, p.bwd.w_h,
                                            p.bwd.b, zeros, zeros)
        lstm_f.append((hf, cf, gf))
        lstm_b.append((hb_r, cb_r, gb_r))
        cat = np.concatenate([hf, hb_r[::-1]], axis=2)
        concats.append(cat)
        a_l = cat @ p.w_combine + p.b_combine
        z_l = stage_tail(a_l, l)
        acc = acc + z_l

    # additive attention over the last hidden layer's recent steps
    z_last = z_post[L]
    span_cfg = cfg.attention_span or T
    pre_a = z_last @ theta.attn_wa
    pre_z = z_last @ theta.attn_za
    attn = np.empty((T, B, w))
    spans, attn_e, attn_zeta = [], [], []
    for t in range(T):
        span = min(span_cfg, t + 1)
        idx = np.arange(t, t - span, -1)
        e = np.tanh(pre_a[idx] + pre_z[t][None] + theta.attn_ba)
        s = e @ theta.attn_wrel                      # (span, B)
        m = s.max(axis=0)
        ez = np.exp(s - m)
        zeta = ez / ez.sum(axis=0)
        attn[t] = np.einsum("kb,kba->ba", zeta, z_last[idx])
        spans.append(span)
        attn_e.append(e)
        attn_zeta.append(zeta)
    _check_finite(attn, "attention")

    head_in = attn.copy()
    for l in range(1, L):
        head_in += z_post[l]
    z_out = head_in @ theta.w_out + theta.b_out
    _check_finite(z_out, "output head")
    if cfg.head_mode == "softmax":
        zc = z_out - z_out.max(axis=2, keepdims=True)
        ez = np.exp(zc)
        p_hat = ez / ez.sum(axis=2, keepdims=True)
    else:
        p_hat = 1.0 / (1.0 + np.exp(-z_out))

    trace = ForwardTrace(
        theta=theta, training=training, head_mode=cfg.head_mode, x=x,
        masks=masks, pre_bn=pre_bn, xhat=xhats, bn_var=bn_vars,
        relu_out=relus, z_post=z_post, layer_in=layer_in, lstm_fwd=lstm_f,
        lstm_bwd=lstm_b, concat=concats, attn_spans=spans, attn_e=attn_e,
        attn_zeta=attn_zeta, head_in=head_in, z_out=z_out, p_hat=p_hat)
    return p_hat, trace


def network_forward(frame_input: np.ndarray, theta: NetworkParams,
                    cfg: TrainConfig, rng: Optional[RngStream] = None):
    """Single-frame forward: frame_input (T, d_in) -> (p_hat (T, K), trace)."""
    frame_input = np.asarray(frame_input, dtype=np.float64)
    if frame_input.ndim != 2:
        raise InputError("frame input must be (steps, features)")
    p, trace = forward_batch(frame_input[:, None, :], theta, cfg,
                             dropout_stream=rng)
    return p[:, 0, :], trace


# ---------------------------------------------------------------------------
# loss


def data_loss_batch(labels: np.ndarray, p_hat: np.ndarray,
                    head_mode: str) -> float:
    """Mean cross-entropy over steps and batch. labels: (T,B,K) in {0,1}."""
    q = np.clip(p_hat, 1e-12, 1.0 if head_mode == "softmax" else 1 - 1e-12)
    K = labels.shape[-1]
    if head_mode == "softmax":
        per = -(labels * np.log(q)).sum(axis=2) / K
    else:
        per = -(labels * np.log(q)
                + (1 - labels) * np.log(1 - q)).sum(axis=2) / K
    return float(per.mean())


def loss(p: np.ndarray, p_hat: np.ndarray, theta: Optional[NetworkParams],
         lam: float, head_mode: str = "softmax") -> float:
    """Cross-entropy of one K-vector prediction plus lam * sum(theta^2)."""
    if lam < 0:
        raise ConfigError(f"l2 coefficient must be >= 0, got {lam}")
    p = np.asarray(p, dtype=np.float64).reshape(1, 1, -1)
    p_hat = np.asarray(p_hat, dtype=np.float64).reshape(1, 1, -1)
    reg = lam * theta.l2_norm_sq() if theta is not None else 0.0
    return data_loss_batch(p, p_hat, head_mode) + reg


# ---------------------------------------------------------------------------
# backward


def _bn_backward_batch(dy, xhat, var, scale):
    B = dy.shape[1]
    dscale = np.einsum("tba,tba->a", dy, xhat)
    dshift = dy.sum(axis=(0, 1))
    dxhat = dy * scale
    inv = (1.0 / np.sqrt(var + BN_EPS))[:, None, :]
    sum_d = dxhat.sum(axis=1, keepdims=True)
    sum_dx = (dxhat * xhat).sum(axis=1, keepdims=True)
    da = (inv / B) * (B * dxhat - sum_d - xhat * sum_dx)
    return da, dscale, dshift


def backward_batch(trace: ForwardTrace, labels: np.ndarray,
                   theta: NetworkParams, cfg: TrainConfig) -> dict:
    """Gradients of (mean data loss + l2) w.r.t. every registered tensor.

    labels: (T, B, K) binary activity indicators.
    """
    if trace.theta is not theta:
        raise StateError("trace was produced by a different parameter set")
    if not trace.training:
        raise StateError("backward needs a training-mode trace")
    T, B, _ = trace.x.shape
    K = theta.num_outputs
    L = theta.layers
    w = theta.width
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (T, B, K):
        raise InputError(f"labels shaped {labels.shape}, expected {(T, B, K)}")
    scale = 1.0 / (T * B)
    p_hat = trace.p_hat
    if trace.head_mode == "softmax":
        dz_out = scale / K * (p_hat * labels.sum(axis=2, keepdims=True)
                              - labels)
    else:
        dz_out = scale / K * (p_hat - labels)

    grads = {name: np.zeros_like(arr) for name, arr in theta.tensors()}
    grads["w_out"] += np.einsum("tba,tbk->ak", trace.head_in, dz_out)
    grads["b_out"] += dz_out.sum(axis=(0, 1))
    dhead = np.einsum("tbk,ak->tba", dz_out, theta.w_out)

    dz_stage = [np.zeros((T, B, w)) for _ in range(L + 1)]
    for l in range(1, L):
        dz_stage[l] += dhead
    dattn = dhead

    # attention backward
    z_last = trace.z_post[L]
    dpre_a = np.zeros((T, B, w))
    dpre_z = np.zeros((T, B, w))
    for t in range(T):
        span = trace.attn_spans[t]
        idx = np.arange(t, t - span, -1)
        e = trace.attn_e[t]
        zeta = trace.attn_zeta[t]
        hist = z_last[idx]
        dzeta = np.einsum("ba,kba->kb", dattn[t], hist)
        for k in range(span):
            dz_stage[L][idx[k]] += zeta[k][:, None] * dattn[t]
        ds = zeta * (dzeta - (zeta * dzeta).sum(axis=0, keepdims=True))
        grads["attn_wrel"] += np.einsum("kb,kba->a", ds, e)
        darg = ds[:, :, None] * theta.attn_wrel[None, None, :] * (1.0 - e * e)
        grads["attn_ba"] += darg.sum(axis=(0, 1))
        dpre_z[t] += darg.sum(axis=0)
        for k in range(span):
            dpre_a[idx[k]] += darg[k]
    grads["attn_wa"] += np.einsum("tba,tbc->ac", z_last, dpre_a)
    grads["attn_za"] += np.einsum("tba,tbc->ac", z_last, dpre_z)
    dz_stage[L] += np.einsum("tbc,ac->tba", dpre_a, theta.attn_wa)
    dz_stage[L] += np.einsum("tbc,ac->tba", dpre_z, theta.attn_za)

    zeros = np.zeros((B, w))

    def stage_tail_backward(dz, l):
        if trace.masks[l] is not None:
            dr = dz * trace.masks[l]
        else:
            dr = dz
        dbn = dr * (trace.relu_out[l] > 0)
        da, dscale, dshift = _bn_backward_batch(dbn, trace.xhat[l],
                                                trace.bn_var[l],
                                                theta.bn_scale[l])
        grads[f"bn{l}_scale"] += dscale
        grads[f"bn{l}_shift"] += dshift
        return da

    for l in range(L, 0, -1):
        p = theta.hidden[l - 1]
        da_l = stage_tail_backward(dz_stage[l], l)
        cat = trace.concat[l - 1]
        grads[f"h{l}_comb_w"] += np.einsum("tbc,tba->ca", cat, da_l)
        grads[f"h{l}_comb_b"] += da_l.sum(axis=(0, 1))
        dcat = np.einsum("tba,ca->tbc", da_l, p.w_combine)
        dh_f = np.ascontiguousarray(dcat[:, :, :w])
        dh_b_rev = np.ascontiguousarray(dcat[::-1, :, w:])
        u = trace.layer_in[l - 1]
        hf, cf, gf = trace.lstm_fwd[l - 1]
        du_f, dwx, dwh, db = lstm_seq_backward(u, p.fwd.w_x, p.fwd.w_h, gf,
                                               hf, cf, zeros, zeros, dh_f)
        grads[f"h{l}_fwd_wx"] += dwx
        grads[f"h{l}_fwd_wh"] += dwh
        grads[f"h{l}_fwd_b"] += db
        u_rev = np.ascontiguousarray(u[::-1])
        hb, cb, gb = trace.lstm_bwd[l - 1]
        du_b, dwx, dwh, db = lstm_seq_backward(u_rev, p.bwd.w_x, p.bwd.w_h,
                                               gb, hb, cb, zeros, zeros,
                                               dh_b_rev)
        grads[f"h{l}_bwd_wx"] += dwx
        grads[f"h{l}_bwd_wh"] += dwh
        grads[f"h{l}_bwd_b"] += db
        du = du_f + du_b[::-1]
        for i in range(l):
            dz_stage[i] += du

    da0 = stage_tail_backward(dz_stage[0], 0)
    grads["w_in"] += np.einsum("tbd,tba->da", trace.x, da0)
    grads["b_in"] += da0.sum(axis=(0, 1))

    if cfg.l2_lambda > 0:
        for name, arr in theta.tensors():
            grads[name] += 2.0 * cfg.l2_lambda * arr
    return grads


def network_backward(trace: ForwardTrace, p: np.ndarray,
                     theta: NetworkParams, cfg: TrainConfig) -> dict:
    """Single-frame wrapper: p is (T, K) or (K,) ground-truth activity."""
    p = np.asarray(p, dtype=np.float64)
    T = trace.x.shape[0]
    if p.ndim == 1:
        p = np.broadcast_to(p, (T, p.shape[0]))
    return backward_batch(trace, p[:, None, :], theta, cfg)
