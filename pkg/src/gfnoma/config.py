"""Experiment configuration and run manifests.

Config files are flat `key = value` text using the canonical parameter
names (K, N, S, J, eta, ...).  Command-line flags override file values, and
the GFNM_SEED environment variable overrides both.
"""

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    modulation: str = "qpsk"
    K: int = 200                 # total devices
    N: int = 100                 # subcarriers / spreading length
    S: int = 20                  # active devices
    J: int = 7                   # time slots
    eta: float = 0.5             # temporal correlation
    snr_min_db: float = 0.0      # training SNR range
    snr_max_db: float = 20.0
    snr_db: float = 6.0          # single-point evaluation SNR
    tau: float = 0.5             # detection threshold
    L: int = 3                   # hidden layers
    alpha: int = 1000            # hidden width
    psi: float = 0.001           # learning rate
    B: int = 20                  # batch size
    rho_drop: float = 0.3
    validation_split: float = 0.2
    delta1: float = 0.9
    delta2: float = 0.99
    eps_adam: float = 1e-8
    adam_bias_correction: bool = False
    lambda_l2: float = 1e-4
    grad_clip: float = 5.0
    epochs: int = 10
    frames: int = 2000           # training frames U
    seed: int = 1
    trials: int = 1000
    out_dir: str = "."
    head_mode: str = "sigmoid"   # "sigmoid" | "softmax"
    data_mode: str = "oracle"    # "oracle" | "blind"
    input_mode: str = "per-slot"
    attention_span: int = 0      # 0 -> all available steps
    path_loss: bool = False
    channel_model: str = "flat"  # "flat" | "per-subcarrier"

    @property
    def codebook_seed(self) -> int:
        return self.seed

    def validate(self) -> "ExperimentConfig":
        def bad(fieldname, why):
            raise ConfigError(f"config field '{fieldname}' invalid: {why}")

        for name in ("K", "N", "J", "L", "alpha", "B", "epochs", "frames",
                     "trials"):
            if getattr(self, name) < 1:
                bad(name, f"must be >= 1, got {getattr(self, name)}")
        if self.S < 1:
            bad("S", f"must be >= 1, got {self.S}")
        if self.S > self.K:
            bad("S", f"must be <= K={self.K}, got {self.S}")
        if not 0.0 <= self.eta <= 1.0:
            bad("eta", f"must be in [0, 1], got {self.eta}")
        if not 0.0 < self.tau < 1.0:
            bad("tau", f"must be in (0, 1), got {self.tau}")
        if not 0.0 <= self.rho_drop < 1.0:
            bad("rho_drop", f"must be in [0, 1), got {self.rho_drop}")
        if not 0.0 <= self.validation_split < 1.0:
            bad("validation_split",
                f"must be in [0, 1), got {self.validation_split}")
        if self.psi <= 0:
            bad("psi", f"must be > 0, got {self.psi}")
        for name in ("delta1", "delta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                bad(name, f"must be in (0, 1), got {v}")
        if self.lambda_l2 < 0:
            bad("lambda_l2", f"must be >= 0, got {self.lambda_l2}")
        if self.snr_min_db > self.snr_max_db:
            bad("snr_min_db", "training SNR range is empty")
        if self.head_mode not in ("sigmoid", "softmax"):
            bad("head_mode", f"must be sigmoid or softmax, got "
                             f"{self.head_mode!r}")
        if self.data_mode not in ("oracle", "blind"):
            bad("data_mode", f"must be oracle or blind, got "
                             f"{self.data_mode!r}")
        if self.input_mode not in ("per-slot", "full-frame"):
            bad("input_mode", f"must be per-slot or full-frame, got "
                              f"{self.input_mode!r}")
        if self.modulation != "qpsk":
            bad("modulation", f"only qpsk is supported, got "
                              f"{self.modulation!r}")
        if self.attention_span < 0:
            bad("attention_span", "must be >= 0 (0 = all steps)")
        if self.channel_model not in ("flat", "per-subcarrier"):
            bad("channel_model", f"must be flat or per-subcarrier, got "
                                 f"{self.channel_model!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in dataclasses.fields(cls)}


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config field '{name}': {exc}") from None


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Build a config from defaults, an optional file, and overrides.
    GFNM_SEED, when set, wins over everything."""
    values = {}
    types = ExperimentConfig.field_types()
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                                  f"got {line!r}")
            key, raw = (s.strip() for s in stripped.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config field "
                                  f"'{key}'")
            values[key] = _coerce(key, raw, types[key])
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown config field '{key}'")
        values[key] = _coerce(key, raw, types[key]) \
            if isinstance(raw, str) else raw
    env_seed = os.environ.get("GFNM_SEED")
    if env_seed is not None:
        values["seed"] = _coerce("seed", env_seed, int)
    return ExperimentConfig(**values).validate()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    code_version: str
    outputs: dict
    started: float
    finished: float

    @property
    def duration_s(self) -> float:
        return self.finished - self.started

    def write(self, path) -> None:
        """Atomic write (tmp file + rename)."""
        payload = dataclasses.asdict(self)
        payload["duration_s"] = self.duration_s
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)


def manifest_for(command: str, config: ExperimentConfig, outputs,
                 started: float) -> RunManifest:
    from . import __version__

    return RunManifest(command=command, config=config.to_dict(),
                       seed=config.seed, code_version=__version__,
                       outputs={str(p): sha256_file(p) for p in outputs},
                       started=started, finished=time.time())
