"""Command-line surface: gen-data, train, eval, sweep, flops.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault.
Every command writes its outputs plus a `<output>.manifest.json` recording
the config snapshot, seeds and SHA-256 hashes, so a run can be re-verified.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, manifest_for
from .detectors import DetectorConfig
from .errors import ConfigError, GfnomaError, InputError, NumericError
from .flops import TECHNIQUES, FlopModel, flops
from .montecarlo import DETECTOR_NAMES, SWEEP_AXES, plot_report, run_monte_carlo
from .network import NetworkParams, TrainConfig
from .rng import RngStream
from .signal import generate_codebook, synthesize_random_frame
from . import framefile, training


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value config file")
    for name in ExperimentConfig.field_types():
        parser.add_argument(f"--{name}", dest=f"cfg_{name}", metavar="V",
                            help=argparse.SUPPRESS)


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for key, val in vars(args).items():
        if key.startswith("cfg_") and val is not None:
            overrides[key[4:]] = val
    return load_config(args.config, overrides)


def _parse_values(spec: str):
    """Axis values: 'a,b,c' or 'start:stop:step' (stop inclusive)."""
    if ":" in spec:
        parts = [float(p) for p in spec.split(":")]
        if len(parts) == 2:
            parts.append(1.0)
        start, stop, step = parts
        if step <= 0:
            raise ConfigError("sweep step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]
    return [float(p) for p in spec.split(",")]


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    started = time.time()
    count = cfg.frames if args.count is None else int(args.count)
    if count < 0:
        raise ConfigError("frame count must be >= 0")
    out = Path(args.out or Path(cfg.out_dir) / "dataset.gfnm")
    out.parent.mkdir(parents=True, exist_ok=True)
    codebook = generate_codebook(cfg.K, cfg.N, seed=cfg.codebook_seed)
    snr_stream = RngStream.from_seed(cfg.seed, 11)
    snrs = cfg.snr_min_db + (cfg.snr_max_db - cfg.snr_min_db) \
        * snr_stream.uniform(max(count, 1))

    def frames():
        for i in range(count):
            yield synthesize_random_frame(codebook, cfg.S, cfg.J, cfg.eta,
                                          float(snrs[i]), cfg.seed, i,
                                          channel_model=cfg.channel_model)

    meta = cfg.to_dict()
    meta["codebook_seed"] = cfg.codebook_seed
    meta["alphabet"] = list(codebook.alphabet)
    framefile.write_dataset(out, frames(), meta, cfg.K, cfg.N, cfg.J, cfg.S,
                            cfg.eta)
    outputs = [out, framefile.sidecar_path(out)]
    manifest_for("gen-data", cfg, outputs, started).write(
        str(out) + ".manifest.json")
    print(f"wrote {count} frames to {out}")
    return 0


def _train_cfg(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(batch_size=cfg.B, rho_drop=cfg.rho_drop,
                       l2_lambda=cfg.lambda_l2, tau=cfg.tau, mode="train",
                       head_mode=cfg.head_mode,
                       validation_split=cfg.validation_split,
                       attention_span=cfg.attention_span or None,
                       input_mode=cfg.input_mode, grad_clip=cfg.grad_clip,
                       adam_bias_correction=cfg.adam_bias_correction)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    started = time.time()
    header, codebook, frames = framefile.read_dataset(args.data)
    if (header["K"], header["N"], header["J"]) != (cfg.K, cfg.N, cfg.J):
        raise InputError(
            f"dataset dimensions (K={header['K']}, N={header['N']}, "
            f"J={header['J']}) do not match the config "
            f"(K={cfg.K}, N={cfg.N}, J={cfg.J})")
    if not frames:
        raise InputError(f"{args.data} holds no frames to train on")
    inputs = np.stack([training.frame_to_input(f, cfg.input_mode)
                       for f in frames])
    labels = np.stack([training.frame_labels(f, cfg.input_mode)
                       for f in frames])
    dataset = training.TrainingSet(inputs=inputs, labels=labels)
    tcfg = _train_cfg(cfg)
    d_in = inputs.shape[2]
    steps = inputs.shape[1]
    if args.resume:
        theta, adam, _ = training.load_checkpoint(args.resume)
        if (theta.d_in, theta.num_steps, theta.num_outputs) \
                != (d_in, steps, cfg.K):
            raise InputError("resume checkpoint does not match the dataset "
                             f"(checkpoint d_in={theta.d_in}, steps="
                             f"{theta.num_steps}, K={theta.num_outputs}; "
                             f"dataset d_in={d_in}, steps={steps}, K={cfg.K})")
    else:
        theta = NetworkParams.initialize(d_in, cfg.alpha, cfg.L, cfg.K,
                                         steps, seed=cfg.seed)
        adam = None
    from .optim import AdamState

    adam = adam or AdamState.for_params(theta, psi=cfg.psi,
                                        delta1=cfg.delta1, delta2=cfg.delta2,
                                        eps=cfg.eps_adam)
    theta, history, adam = training.train(dataset, tcfg, theta, cfg.epochs,
                                          adam=adam, seed=cfg.seed,
                                          verbose=not args.quiet)
    out = Path(args.out or Path(cfg.out_dir) / "model.gfnc")
    out.parent.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(out, theta, adam, {"config": cfg.to_dict()})
    loss_csv = Path(str(out) + ".loss.csv")
    training.write_loss_history(loss_csv, history)
    manifest_for("train", cfg, [out, loss_csv], started).write(
        str(out) + ".manifest.json")
    print(f"checkpoint {out} after {adam.step} steps; "
          f"final val loss {history[-1][2]:.5f}")
    return 0


def _load_net(args, detectors):
    if "proposed" not in detectors:
        return None
    if not args.checkpoint:
        raise ConfigError("the 'proposed' detector needs --checkpoint")
    theta, _, _ = training.load_checkpoint(args.checkpoint)
    return theta


def _run_sweep(args, axis, values) -> int:
    cfg = _config_from_args(args)
    started = time.time()
    detectors = [d.strip() for d in args.detectors.split(",") if d.strip()]
    net = _load_net(args, detectors)
    trials = cfg.trials
    det_cfg = DetectorConfig(tau=cfg.tau, data_mode=cfg.data_mode,
                             head_mode=cfg.head_mode,
                             input_mode=cfg.input_mode)
    base = {"K": cfg.K, "N": cfg.N, "S": cfg.S, "J": cfg.J, "eta": cfg.eta,
            "snr_db": cfg.snr_db, "codebook_seed": cfg.codebook_seed,
            "channel_model": cfg.channel_model}
    report = run_monte_carlo(axis, values, detectors, base, trials,
                             cfg.seed, net=net, det_cfg=det_cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = out_dir / (args.prefix or f"sweep_{axis}")
    csv = Path(f"{prefix}.csv")
    report.to_csv(csv)
    outputs = [csv] + [Path(p) for p in plot_report(report, prefix)]
    manifest_for(f"sweep:{axis}", cfg, outputs, started).write(
        f"{prefix}.manifest.json")
    print(f"wrote {csv}")
    return 0


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; valid: "
                          f"{', '.join(SWEEP_AXES)}")
    values = _parse_values(args.values)
    if args.axis in ("S", "overloading"):
        values = [int(round(v)) for v in values]
    return _run_sweep(args, args.axis, values)


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    snr = float(args.snr_db) if args.snr_db is not None else cfg.snr_db
    args.cfg_snr_db = repr(snr)
    args.prefix = args.prefix or "eval"
    return _run_sweep(args, "snr", [snr])


def cmd_flops(args) -> int:
    cfg = _config_from_args(args)
    started = time.time()
    techniques = list(TECHNIQUES) if args.technique == "all" \
        else [args.technique]
    for t in techniques:
        if t not in TECHNIQUES:
            raise ConfigError(f"unknown technique {t!r}; valid: "
                              f"{', '.join(TECHNIQUES)} or all")
    s_values = [int(round(v)) for v in _parse_values(args.s_range)]
    rows = []
    for tech in techniques:
        for s in s_values:
            count = flops(FlopModel(technique=tech, num_devices=cfg.K,
                                    subcarriers=cfg.N, hidden_layers=cfg.L,
                                    hidden_width=cfg.alpha, sparsity=s))
            rows.append((tech, s, count))
    width = max(len(t) for t, _, _ in rows)
    print(f"{'technique':<{width}}  {'S':>4}  flops")
    for tech, s, count in rows:
        print(f"{tech:<{width}}  {s:>4}  {count:.4e}")
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "flops.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        f.write("technique,S,flops\n")
        for tech, s, count in rows:
            f.write(f"{tech},{s},{count!r}\n")
    manifest_for("flops", cfg, [out], started).write(
        str(out) + ".manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfnoma",
        description="grant-free NOMA detection workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a frame dataset")
    _add_config_flags(p)
    p.add_argument("--count", type=int, help="number of frames (default: "
                                             "config 'frames')")
    p.add_argument("--out", help="dataset path (.gfnm)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the detector network")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--out", help="checkpoint path (.gfnc)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="single-point evaluation")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="trained model (.gfnc)")
    p.add_argument("--detectors", default="proposed,ls-omp,oracle-ls")
    p.add_argument("--snr-db", dest="snr_db")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="metric sweep over an axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True,
                   help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True,
                   help="'start:stop:step' or comma list")
    p.add_argument("--checkpoint")
    p.add_argument("--detectors", default="ls-omp,oracle-ls")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("flops", help="analytic complexity table")
    _add_config_flags(p)
    p.add_argument("--technique", default="all")
    p.add_argument("--s-range", dest="s_range", default="10,20,30,40")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 4
    except GfnomaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
