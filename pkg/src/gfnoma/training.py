"""Training datasets, the training loop, and checkpoint serialization.

A training example is just the real/imag-stacked received vectors plus the
binary activity labels; frames are reduced to that pair as soon as they are
synthesized so even large datasets stay small in memory.
"""

import json
import struct
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError
from .network import (NetworkParams, TrainConfig, backward_batch,
                      data_loss_batch, forward_batch)
from .optim import AdamState, adam_step, clip_gradients
from .rng import RngStream, derive_key, STREAM_DROPOUT, STREAM_SHUFFLE
from .signal import ReceivedFrame, SpreadingCodebook, synthesize_random_frame


def frame_to_input(frame: ReceivedFrame, input_mode: str) -> np.ndarray:
    """Network input per the real/imag split convention, normalized to unit
    average power per frame (receiver-side AGC, so the network sees a
    consistent scale across the training SNR range).

    per-slot: (J, 2N) rows [Re(y_j) | Im(y_j)]; full-frame: (1, 2NJ)."""
    n = frame.codebook.spreading_length
    j = frame.num_slots
    if input_mode == "per-slot":
        y = frame.y.reshape(j, n)
        x = np.concatenate([y.real, y.imag], axis=1)
    elif input_mode == "full-frame":
        x = np.concatenate([frame.y.real, frame.y.imag])[None, :]
    else:
        raise ConfigError(f"unknown input_mode {input_mode!r}")
    rms = np.sqrt(np.mean(x * x))
    return x / max(rms, np.finfo(np.float64).tiny)


def frame_labels(frame: ReceivedFrame, input_mode: str) -> np.ndarray:
    """Activity targets: per-slot indicators, or their union in full-frame
    mode (a device is a frame-level target if it transmits in any slot)."""
    if input_mode == "per-slot":
        return frame.activity.indicators.astype(np.float64)
    union = frame.activity.indicators.any(axis=0).astype(np.float64)
    return union[None, :]


@dataclass
class TrainingSet:
    inputs: np.ndarray   # (U, T, d_in)
    labels: np.ndarray   # (U, T, K)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @classmethod
    def synthesize(cls, codebook: SpreadingCodebook, sparsity: int,
                   slots: int, eta: float, snr_min_db: float,
                   snr_max_db: float, count: int, master_seed: int,
                   input_mode: str = "per-slot",
                   channel_model: str = "flat") -> "TrainingSet":
        """`count` random frames with per-frame SNR uniform in the given
        range, reduced to (input, label) pairs."""
        if count < 1:
            raise ConfigError("training set needs at least one frame")
        snr_stream = RngStream.from_seed(master_seed, 11)
        snrs = snr_min_db + (snr_max_db - snr_min_db) * snr_stream.uniform(count)
        xs, ys = [], []
        for i in range(count):
            fr = synthesize_random_frame(codebook, sparsity, slots, eta,
                                         float(snrs[i]), master_seed, i,
                                         channel_model=channel_model)
            xs.append(frame_to_input(fr, input_mode))
            ys.append(frame_labels(fr, input_mode))
        return cls(inputs=np.stack(xs), labels=np.stack(ys))


def train(dataset: TrainingSet, cfg: TrainConfig, theta: NetworkParams,
          epochs: int, adam: Optional[AdamState] = None, seed: int = 0,
          time_budget_s: Optional[float] = None, verbose: bool = False):
    """Minibatch training with the literal Adam update and global-norm clip.

    Returns (theta, history, adam) where history is one
    (epoch, train_loss, validation_loss) row per completed epoch.  The split
    is deterministic in `seed`; batches are reshuffled every epoch.
    """
    u = len(dataset)
    if u < 1:
        raise ConfigError("empty dataset")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    adam = adam or AdamState.for_params(theta)
    split_stream = RngStream.from_seed(seed, STREAM_SHUFFLE)
    order = split_stream.permutation(u)
    n_val = int(round(cfg.validation_split * u))
    n_val = min(max(n_val, 0), u - 1)
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    drop_stream = RngStream.from_seed(seed, STREAM_DROPOUT)
    train_cfg_mode = TrainConfig(**{**cfg.__dict__, "mode": "train"})
    infer_cfg = TrainConfig(**{**cfg.__dict__, "mode": "inference",
                               "rho_drop": 0.0})
    history = []
    t_start = time.time()
    for epoch in range(1, epochs + 1):
        ep_stream = RngStream.from_seed(seed, STREAM_SHUFFLE, epoch)
        perm = train_idx[ep_stream.permutation(len(train_idx))]
        losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs at least 2 samples
            x = np.ascontiguousarray(
                dataset.inputs[idx].transpose(1, 0, 2))
            lab = np.ascontiguousarray(
                dataset.labels[idx].transpose(1, 0, 2))
            p_hat, trace = forward_batch(x, theta, train_cfg_mode,
                                         dropout_stream=drop_stream)
            batch_loss = (data_loss_batch(lab, p_hat, cfg.head_mode)
                          + cfg.l2_lambda * theta.l2_norm_sq())
            grads = backward_batch(trace, lab, theta, train_cfg_mode)
            clip_gradients(grads, cfg.grad_clip)
            adam_step(theta, grads, adam,
                      bias_correction=cfg.adam_bias_correction)
            losses.append(batch_loss)
        val_loss = evaluate_loss(dataset, val_idx, theta, infer_cfg) \
            if n_val else float("nan")
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append((epoch, train_loss, val_loss))
        if verbose:
            print(f"epoch {epoch:3d}  train {train_loss:.5f}  "
                  f"val {val_loss:.5f}", flush=True)
        if time_budget_s is not None and time.time() - t_start > time_budget_s:
            break
    return theta, history, adam


def evaluate_loss(dataset: TrainingSet, idx, theta: NetworkParams,
                  infer_cfg: TrainConfig, batch: int = 256) -> float:
    """Mean data loss over the given indices, inference mode."""
    tot, cnt = 0.0, 0
    for lo in range(0, len(idx), batch):
        sl = idx[lo:lo + batch]
        x = np.ascontiguousarray(dataset.inputs[sl].transpose(1, 0, 2))
        lab = np.ascontiguousarray(dataset.labels[sl].transpose(1, 0, 2))
        p_hat, _ = forward_batch(x, theta, infer_cfg)
        tot += data_loss_batch(lab, p_hat, infer_cfg.head_mode) * len(sl)
        cnt += len(sl)
    return tot / max(cnt, 1)


def write_loss_history(path, history) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in history:
            f.write(f"{epoch},{tr!r},{va!r}\n")


# ---------------------------------------------------------------------------
# checkpoint container: magic 'GFNC', little-endian, named f64 tensors

CHECKPOINT_MAGIC = b"GFNC"
CHECKPOINT_VERSION = 1


def _write_array(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode()
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def _read_array(f):
    (nlen,) = struct.unpack("<H", f.read(2))
    name = f.read(nlen).decode()
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(path, theta: NetworkParams, adam: AdamState,
                    meta: dict) -> None:
    """Versioned binary checkpoint: meta JSON, trainables, running stats
    and both Adam moment sets."""
    meta = dict(meta)
    meta.update(d_in=theta.d_in, width=theta.width, layers=theta.layers,
                num_outputs=theta.num_outputs, num_steps=theta.num_steps,
                step=adam.step, psi=adam.psi, delta1=adam.delta1,
                delta2=adam.delta2, eps=adam.eps)
    blob = json.dumps(meta, sort_keys=True).encode()
    tensors = theta.tensors()
    extras = []
    for l in range(theta.layers + 1):
        extras.append((f"run_mean{l}", theta.bn_run_mean[l]))
        extras.append((f"run_var{l}", theta.bn_run_var[l]))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors) + len(extras)
                            + 2 * len(tensors)))
        for name, arr in tensors:
            _write_array(f, name, arr)
        for name, arr in extras:
            _write_array(f, name, arr)
        for name, _ in tensors:
            _write_array(f, "adam_m:" + name, adam.m[name])
        for name, _ in tensors:
            _write_array(f, "adam_v:" + name, adam.v[name])


def load_checkpoint(path):
    """Returns (theta, adam, meta)."""
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise InputError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        (blen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(blen).decode())
        (count,) = struct.unpack("<I", f.read(4))
        arrays = dict(_read_array(f) for _ in range(count))
    theta = NetworkParams.initialize(meta["d_in"], meta["width"],
                                     meta["layers"], meta["num_outputs"],
                                     meta["num_steps"], seed=0)
    for name, arr in theta.tensors():
        arr[...] = arrays[name]
    for l in range(theta.layers + 1):
        theta.bn_run_mean[l][...] = arrays[f"run_mean{l}"]
        theta.bn_run_var[l][...] = arrays[f"run_var{l}"]
    adam = AdamState.for_params(theta, psi=meta["psi"], delta1=meta["delta1"],
                                delta2=meta["delta2"], eps=meta["eps"])
    adam.step = int(meta["step"])
    for name, _ in theta.tensors():
        adam.m[name][...] = arrays["adam_m:" + name]
        adam.v[name][...] = arrays["adam_v:" + name]
    return theta, adam, meta


def dataset_seed_for_training(seed: int) -> int:
    return derive_key(seed, 12)
