"""Monte Carlo evaluation harness.

Every detector at a sweep point consumes byte-identical frames: the frame
seed depends only on (master seed, trial index), so detectors are paired
within a point and frames are paired across axis values (same channel, bits
and noise draws; only the swept parameter changes the synthesis).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detectors import (DetectorConfig, detect_frame, ls_omp_detect,
                        oracle_ls_detect)
from .errors import ConfigError
from .metrics import frame_metrics
from .network import NetworkParams
from .signal import generate_codebook, synthesize_random_frame

DETECTOR_NAMES = ("proposed", "ls-omp", "oracle-ls")
METRIC_KEYS = ("rho_d", "accuracy", "ber", "fa_rate")
SWEEP_AXES = ("snr", "S", "overloading", "eta")


@dataclass
class MetricsReport:
    axis: str
    rows: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)  # (axis_value, det) -> arrays

    def to_csv(self, path) -> None:
        cols = ["axis_value", "detector", "rho_d", "rho_d_ci", "accuracy",
                "accuracy_ci", "ber", "ber_ci", "trials", "fa_rate"]
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in self.rows:
                cells = []
                for c in cols:
                    v = row[c]
                    cells.append(repr(float(v)) if isinstance(
                        v, (float, np.floating)) else str(v))
                f.write(",".join(cells) + "\n")

    def row(self, axis_value, detector) -> dict:
        for r in self.rows:
            if r["axis_value"] == axis_value and r["detector"] == detector:
                return r
        raise KeyError((axis_value, detector))


def _ci95(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(1.96 * np.nanstd(values, ddof=1) / np.sqrt(values.size))


def _point_params(axis: str, value, base: dict):
    p = dict(base)
    if axis == "snr":
        p["snr_db"] = float(value)
    elif axis == "S":
        p["S"] = int(value)
    elif axis == "eta":
        p["eta"] = float(value)
    elif axis == "overloading":
        # value is the overloading percentage; N fixed
        p["K"] = int(round(value / 100.0 * p["N"]))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: "
                          f"{', '.join(SWEEP_AXES)}")
    return p


def run_monte_carlo(axis: str, values, detectors, base: dict,
                    trials: int, master_seed: int,
                    net: Optional[NetworkParams] = None,
                    det_cfg: Optional[DetectorConfig] = None,
                    progress=None) -> MetricsReport:
    """Evaluate detectors over a sweep.

    base: dict with K, N, S, J, eta, snr_db and codebook_seed.
    detectors: subset of DETECTOR_NAMES; 'proposed' needs `net`.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not detectors:
        raise ConfigError("need at least one detector")
    for d in detectors:
        if d not in DETECTOR_NAMES:
            raise ConfigError(f"unknown detector {d!r}; valid: "
                              f"{', '.join(DETECTOR_NAMES)}")
    if "proposed" in detectors and net is None:
        raise ConfigError("the proposed detector needs a trained checkpoint")
    det_cfg = det_cfg or DetectorConfig()
    report = MetricsReport(axis=axis)
    for value in values:
        p = _point_params(axis, value, base)
        codebook = generate_codebook(p["K"], p["N"],
                                     seed=p["codebook_seed"])
        if net is not None and "proposed" in detectors \
                and net.num_outputs != p["K"]:
            raise ConfigError(
                f"checkpoint was trained for K={net.num_outputs} but the "
                f"sweep point has K={p['K']}; overloading sweeps need a "
                f"matching checkpoint per point")
        acc = {d: {m: np.empty(trials) for m in METRIC_KEYS}
               for d in detectors}
        for t in range(trials):
            frame = synthesize_random_frame(
                codebook, p["S"], p["J"], p["eta"], p["snr_db"],
                master_seed, t, channel_model=p.get("channel_model", "flat"))
            for d in detectors:
                m = _run_detector(d, frame, codebook, net, det_cfg, p, t)
                for key in METRIC_KEYS:
                    acc[d][key][t] = m[key]
            if progress and (t + 1) % max(1, trials // 10) == 0:
                progress(value, t + 1, trials)
        for d in detectors:
            row = {"axis_value": value, "detector": d, "trials": trials}
            for key in METRIC_KEYS:
                vals = acc[d][key]
                row[key] = float(np.nanmean(vals))
                if key != "fa_rate":
                    row[f"{key}_ci"] = _ci95(vals)
            report.rows.append(row)
            report.samples[(value, d)] = acc[d]
    return report


def _run_detector(name, frame, codebook, net, det_cfg, params, frame_id):
    if name == "proposed":
        res = detect_frame(net, frame, det_cfg, frame_id=frame_id)
        return frame_metrics(frame, res.supports_est, res.bits_est,
                             rotation_invariant=res.rotation_ambiguous)
    if name == "ls-omp":
        sup, bits = ls_omp_detect(frame, codebook, params["S"],
                                  frame.noise_variance)
        return frame_metrics(frame, sup, bits)
    # oracle-ls
    sup, bits = oracle_ls_detect(frame, codebook, frame.activity.supports,
                                 frame.channel.gains, frame.noise_variance)
    return frame_metrics(frame, sup, bits)


def write_results_jsonl(path, results, frames=None) -> None:
    """Per-slot DetectionResult log."""
    import json

    with open(path, "w") as f:
        for i, res in enumerate(results):
            frame = frames[i] if frames is not None else None
            for row in res.to_json_rows(frame=frame):
                f.write(json.dumps(row, sort_keys=True) + "\n")


def plot_report(report: MetricsReport, out_prefix) -> list:
    """One line chart per metric; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    axis_labels = {"snr": "SNR (dB)", "S": "active devices S",
                   "overloading": "overloading factor (%)",
                   "eta": "temporal correlation eta"}
    for metric, ylabel, logy in (("rho_d", "detection probability", False),
                                 ("accuracy", "accuracy (%)", False),
                                 ("ber", "average BER", True)):
        fig, ax = plt.subplots(figsize=(6, 4.2))
        dets = sorted({r["detector"] for r in report.rows})
        for d in dets:
            pts = [(r["axis_value"], r[metric]) for r in report.rows
                   if r["detector"] == d]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=d)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(axis_labels.get(report.axis, report.axis))
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.4)
        ax.legend()
        fig.tight_layout()
        path = f"{out_prefix}_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
