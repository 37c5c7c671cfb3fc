"""Binary frame-dataset container plus its JSON-lines sidecar.

Layout (little-endian):

    header:  magic 'GFNM' | u32 version | u32 K | u32 N | u32 J | u32 S
             | f64 eta
    record:  activity bitmap, packed J*K bits row-major
             channel (J, K, N) complex as interleaved f64 re/im
             bits bitmap, packed J*K*2 bits
             y (N*J) complex as interleaved f64 re/im
             f64 sigma^2

Records are fixed-size, so the frame count is derived from the file length.
The sidecar `<path>.jsonl` carries the generation config (including the
codebook seed, from which the codebook is regenerated on read) as its first
line.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .signal import (ReceivedFrame, SpreadingCodebook, effective_atoms,
                     generate_codebook, ActivityFrame, ChannelRealization,
                     modulate)

MAGIC = b"GFNM"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")


def _record_size(k: int, n: int, j: int) -> int:
    activity = (j * k + 7) // 8
    bits = (j * k * 2 + 7) // 8
    channel = j * k * n * 16
    y = n * j * 16
    return activity + channel + bits + y + 8


def sidecar_path(path) -> Path:
    return Path(str(path) + ".jsonl")


def write_dataset(path, frames, config: dict, k: int, n: int, j: int,
                  s: int, eta: float) -> int:
    """Write frames (an iterable of ReceivedFrame) and the sidecar.
    Returns the number of frames written."""
    count = 0
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, k, n, j, s, eta))
        for fr in frames:
            f.write(np.packbits(fr.activity.indicators.ravel()).tobytes())
            f.write(np.ascontiguousarray(fr.channel.gains)
                    .view(np.float64).tobytes())
            f.write(np.packbits(fr.bits.ravel()).tobytes())
            f.write(np.ascontiguousarray(fr.y).view(np.float64).tobytes())
            f.write(struct.pack("<d", fr.noise_variance))
            count += 1
    with open(sidecar_path(path), "w") as f:
        f.write(json.dumps({"config": config, "count": count},
                           sort_keys=True) + "\n")
    return count


def read_header(path):
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise InputError(f"{path} is too short to be a frame dataset")
    magic, version, k, n, j, s, eta = _HEADER.unpack(head)
    if magic != MAGIC:
        raise InputError(f"{path} is not a frame dataset (bad magic)")
    if version != VERSION:
        raise InputError(f"unsupported dataset version {version}")
    size = Path(path).stat().st_size - _HEADER.size
    rec = _record_size(k, n, j)
    if size % rec != 0:
        raise InputError(f"{path} has a truncated record")
    return {"K": k, "N": n, "J": j, "S": s, "eta": eta,
            "count": size // rec}


def read_sidecar(path) -> dict:
    with open(sidecar_path(path)) as f:
        return json.loads(f.readline())


def read_dataset(path, codebook: SpreadingCodebook = None):
    """Returns (header, codebook, frames). The codebook is regenerated from
    the sidecar config unless one is supplied."""
    header = read_header(path)
    k, n, j = header["K"], header["N"], header["J"]
    if codebook is None:
        cfg = read_sidecar(path)["config"]
        codebook = generate_codebook(k, n, alphabet=cfg.get(
            "alphabet", (-2.0, -1.0, 0.0, 1.0)), seed=cfg["codebook_seed"])
    frames = []
    act_bytes = (j * k + 7) // 8
    bit_bytes = (j * k * 2 + 7) // 8
    with open(path, "rb") as f:
        f.seek(_HEADER.size)
        for _ in range(header["count"]):
            act = np.unpackbits(
                np.frombuffer(f.read(act_bytes), dtype=np.uint8),
                count=j * k).reshape(j, k)
            ch = np.frombuffer(f.read(j * k * n * 16), dtype="<f8")
            gains = (ch[0::2] + 1j * ch[1::2]).reshape(j, k, n)
            bits = np.unpackbits(
                np.frombuffer(f.read(bit_bytes), dtype=np.uint8),
                count=j * k * 2).reshape(j, k, 2)
            yraw = np.frombuffer(f.read(n * j * 16), dtype="<f8")
            y = yraw[0::2] + 1j * yraw[1::2]
            (sigma2,) = struct.unpack("<d", f.read(8))
            frames.append(_rebuild_frame(codebook, act, gains, bits, y,
                                         sigma2))
    return header, codebook, frames


def _rebuild_frame(codebook, indicators, gains, bits, y, sigma2):
    j, k = indicators.shape
    n = codebook.spreading_length
    supports = [np.flatnonzero(indicators[slot]) for slot in range(j)]
    activity = ActivityFrame(slots=j, supports=supports,
                             indicators=indicators.astype(np.uint8),
                             sparsity=int(indicators[0].sum()),
                             configured_eta=float("nan"))
    channel = ChannelRealization(gains=gains, path_loss_enabled=False,
                                 distances_km=None, power_scale=np.ones(k))
    symbols = np.zeros((j, k), dtype=np.complex128)
    for slot in range(j):
        sup = supports[slot]
        if len(sup):
            symbols[slot, sup] = modulate(bits[slot, sup].ravel())
    signal = np.zeros(n * j, dtype=np.complex128)
    for slot in range(j):
        atoms = effective_atoms(codebook, channel, slot)
        signal[slot * n:(slot + 1) * n] = atoms @ symbols[slot]
    snr_db = float("nan")
    if sigma2 > 0:
        ref = max(int(indicators[0].sum()), 1) / n
        snr_db = -10.0 * np.log10(sigma2 / ref)
    return ReceivedFrame(y=y.copy(), noise_variance=sigma2, snr_db=snr_db,
                         activity=activity, channel=channel,
                         bits=bits.astype(np.uint8), symbols=symbols,
                         noise=y - signal, codebook=codebook)
