"""Dataset factory, alignment, training campaigns and evaluation sweeps.

Simulated counterparts of the four experiment days:

* State 0: LFM at 1 V, training cells at the train mismatches; Testing
  Dataset 0 holds further State-0 records including untrained mismatches.
* State 1: Testing Dataset 1, LFM at various amplitudes plus 1-V Costas
  over the 30-160 ps grid.
* States 2 and 3: online demonstrations (Costas, LFM) with an inexact cut
  instead of cross-correlation alignment.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import correlate

from . import __version__
from .analysis import measure_spur
from .calib import CalibrationError, SkewCalibrator
from .crae import Checkpoint, CraeConfig, CRAECompensator, infer_record, load_checkpoint, save_checkpoint
from .sampler import (
    CHANNEL_RATE,
    FS_TOTAL,
    STATE_GAIN,
    STATE_NOISE,
    CaptureRecord,
    ChannelModel,
    SystemState,
    interleave,
    sample_two_channel,
    save_record,
)
from .signals import AWG_RATE, WaveformKind, WaveformSpec, downsample, random_waveform, read_wv01, render_reference, write_wv01

__all__ = [
    "ExperimentConfig",
    "DatasetManifest",
    "Sample",
    "AlignmentError",
    "align_record",
    "segment",
    "make_pair",
    "build_dataset",
    "load_dataset",
    "evaluate_pair",
    "run_training_campaign",
    "run_eval_sweep",
    "REPORT_COLUMNS",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "TIADC_WORKERS"
ROLE_IDS = {"train": 0, "test0": 1, "test1": 2, "eval": 3}
DEFAULT_EVAL_GRID = sorted(set(range(30, 161, 10)) | {79, 92, 165, 175, 220})


class AlignmentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    bands: list = field(default_factory=lambda: [[2.0e9, 3.3e9], [7.0e9, 8.3e9]])
    train_mismatches_ps: list = field(default_factory=lambda: [35.0, 57.0])
    test_mismatches_ps: list = field(default_factory=lambda: [35.0, 57.0, 79.0, 92.0])
    eval_mismatches_ps: list = field(default_factory=lambda: [float(x) for x in DEFAULT_EVAL_GRID])
    amplitudes_v: list = field(default_factory=lambda: [0.4, 0.5, 0.6, 0.7, 0.9, 1.0])
    states: list = field(default_factory=lambda: [0, 1, 2, 3])
    state_gain: dict = field(default_factory=lambda: dict(STATE_GAIN))
    state_noise: dict = field(default_factory=lambda: dict(STATE_NOISE))
    train_records: int = 128
    test0_records: int = 32
    test1_records: int = 32
    eval_records_per_cell: int = 1
    seed: int = 0
    duration: float = 1e-6
    record_len: int = 20_000
    noise_sigma: float = 3e-3
    costas_order: int = 6
    cut_error: int = 50
    crae: CraeConfig = field(default_factory=CraeConfig)

    def __post_init__(self):
        if isinstance(self.crae, dict):
            self.crae = CraeConfig.from_dict(self.crae)
        self.state_gain = {int(k): float(v) for k, v in self.state_gain.items()}
        self.state_noise = {int(k): float(v) for k, v in self.state_noise.items()}
        for name in ("train_records", "test0_records", "test1_records", "eval_records_per_cell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        grid = self.eval_mismatches_ps
        if not all(min(grid) <= m <= max(grid) for m in self.train_mismatches_ps):
            raise ValueError("train mismatches must lie within the eval grid's span")

    @property
    def signal_len(self) -> int:
        return int(round(self.duration * CHANNEL_RATE))

    def state(self, state_id: int) -> SystemState:
        return SystemState(state_id, self.state_gain[state_id], self.state_noise[state_id], seed=1000 + state_id)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crae"] = self.crae.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def full_scale(cls, **overrides) -> "ExperimentConfig":
        """Counts of the original experiment (not run by default)."""
        cfg = cls(train_records=11_200, test0_records=800, test1_records=800, **overrides)
        cfg.crae = replace(cfg.crae, epochs=20_000)
        return cfg


@dataclass(frozen=True)
class Sample:
    """One mismatched record and its 0-ps partner (same spec, seed and state)."""

    role: str
    index: int
    cell: str
    spec: WaveformSpec
    mismatch_ps: float
    state: SystemState
    seed: int
    signal_start: int
    cut: str = "xcorr"

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "index": self.index,
            "cell": self.cell,
            "spec": self.spec.to_dict(),
            "mismatch_ps": self.mismatch_ps,
            "state": self.state.to_dict(),
            "seed": self.seed,
            "signal_start": self.signal_start,
            "cut": self.cut,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(
            d["role"],
            int(d["index"]),
            d["cell"],
            WaveformSpec.from_dict(d["spec"]),
            float(d["mismatch_ps"]),
            SystemState.from_dict(d["state"]),
            int(d["seed"]),
            int(d["signal_start"]),
            d.get("cut", "xcorr"),
        )


def cell_name(role: str, kind, band, mismatch_ps: float, amplitude: float, state_id: int) -> str:
    kind = WaveformKind(kind).value
    return f"{role}_{kind}_{band[0] / 1e9:.1f}-{band[1] / 1e9:.1f}GHz_{mismatch_ps:g}ps_{amplitude:g}V_s{state_id}"


def _sample_seed(cfg: ExperimentConfig, role: str, index: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, ROLE_IDS[role], index]).generate_state(1)[0])


def make_sample(cfg: ExperimentConfig, role: str, index: int, kind, band, mismatch_ps, amplitude, state_id, cut="xcorr") -> Sample:
    seed = _sample_seed(cfg, role, index)
    rng = np.random.default_rng(seed)
    spec = random_waveform(kind, tuple(band), rng, amplitude, cfg.duration, costas_order=cfg.costas_order)
    start = int(rng.integers(0, cfg.record_len - cfg.signal_len + 1))
    cell = cell_name(role, kind, band, mismatch_ps, amplitude, state_id)
    return Sample(role, index, cell, spec, float(mismatch_ps), cfg.state(state_id), seed, start, cut)


def capture_pair(cfg: ExperimentConfig, s: Sample) -> tuple[CaptureRecord, CaptureRecord]:
    ch = ChannelModel(noise_sigma=cfg.noise_sigma)
    common = dict(state=s.state, record_len=cfg.record_len, signal_start=s.signal_start, seed=s.seed, channels=(ch, ch))
    mism = sample_two_channel(s.spec, s.mismatch_ps * 1e-12, **common)
    ref = sample_two_channel(s.spec, 0.0, **common)
    return mism, ref


def reference_channel(spec: WaveformSpec, n: int) -> np.ndarray:
    """Generator waveform at 60 GSa/s decimated by 6 to the channel rate."""
    return downsample(render_reference(spec, AWG_RATE, 6 * n), 6)


def align_record(capture: CaptureRecord, reference, min_corr: float = 0.3) -> tuple[np.ndarray, np.ndarray, int]:
    """Cut both channels at the lag maximizing cross-correlation with ``reference``.

    Returns ``(ch0, ch1, lag)``. The lag comes from channel 0, whose instants
    coincide with the decimated reference grid, and is applied to both channels.
    """
    ref = np.asarray(reference, dtype=float)
    n = ref.size
    if capture.ch0.size < n:
        raise ValueError("capture shorter than the reference")
    xc = correlate(capture.ch0, ref, mode="valid", method="fft")
    lag = int(np.argmax(xc))
    c0, c1 = capture.ch0[lag : lag + n], capture.ch1[lag : lag + n]
    denom = np.linalg.norm(ref) * np.linalg.norm(c0)
    peak = xc[lag] / denom if denom > 0 else 0.0
    if peak < min_corr:
        raise AlignmentError(f"no signal found: normalized correlation peak {peak:.3f} < {min_corr}")
    return c0.copy(), c1.copy(), lag


def inexact_cut(capture: CaptureRecord, n: int, error: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    """Cut at the true start offset by a uniform lag error in ``[-error, error]``."""
    lag = capture.signal_start + int(rng.integers(-error, error + 1))
    lag = int(np.clip(lag, 0, capture.ch0.size - n))
    return capture.ch0[lag : lag + n].copy(), capture.ch1[lag : lag + n].copy(), lag


def segment(v, n_segments: int) -> list[np.ndarray]:
    v = np.asarray(v)
    if n_segments < 1 or v.size % n_segments:
        raise ValueError(f"length {v.size} not divisible into {n_segments} segments")
    return list(v.reshape(n_segments, -1))


def make_pair(cfg: ExperimentConfig, s: Sample) -> dict:
    """Capture, align and interleave one pair; returns aligned records and cut captures."""
    mism, ref = capture_pair(cfg, s)
    n = cfg.signal_len
    if s.cut == "xcorr":
        refch = reference_channel(s.spec, n)
        m0, m1, lag = align_record(mism, refch)
        r0, r1 = ref.ch0[lag : lag + n], ref.ch1[lag : lag + n]
    else:
        rng = np.random.default_rng([s.seed, 7])
        m0, m1, lag = inexact_cut(mism, n, cfg.cut_error, rng)
        r0, r1 = ref.ch0[lag : lag + n], ref.ch1[lag : lag + n]
    start = s.signal_start - lag
    return {
        "sample": s,
        "input": interleave(m0, m1),
        "reference": interleave(r0, r1),
        "capture": mism,
        "reference_capture": ref,
        "aligned_input": mism.with_channels(m0, m1, signal_start=max(start, 0)),
        "aligned_reference": ref.with_channels(r0, r1, signal_start=max(start, 0)),
        "lag": lag,
    }


def dataset_samples(cfg: ExperimentConfig) -> list[Sample]:
    """Enumerate train / Testing Dataset 0 / Testing Dataset 1 samples in a fixed order."""
    out = []
    bands = cfg.bands
    nb = len(bands)
    for i in range(cfg.train_records):
        mm = cfg.train_mismatches_ps[(i // nb) % len(cfg.train_mismatches_ps)]
        out.append(make_sample(cfg, "train", i, "LFM", bands[i % nb], mm, 1.0, 0))
    for i in range(cfg.test0_records):
        mm = cfg.test_mismatches_ps[(i // nb) % len(cfg.test_mismatches_ps)]
        out.append(make_sample(cfg, "test0", i, "LFM", bands[i % nb], mm, 1.0, 0))
    grid = [m for m in cfg.eval_mismatches_ps if 30 <= m <= 160]
    for i in range(cfg.test1_records):
        kind = "LFM" if i % 2 == 0 else "Costas"
        band = bands[(i // 2) % nb]
        mm = grid[(i // (2 * nb)) % len(grid)]
        amp = cfg.amplitudes_v[(i // 2) % len(cfg.amplitudes_v)] if kind == "LFM" else 1.0
        out.append(make_sample(cfg, "test1", i, kind, band, mm, amp, 1))
    seeds = [s.seed for s in out]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("per-sample seed collision")
    return out


@dataclass
class DatasetManifest:
    root: Path
    config_hash: str
    entries: list[dict]

    def samples(self, role: str | None = None) -> list[Sample]:
        return [Sample.from_dict(e) for e in self.entries if role is None or e["role"] == role]

    def arrays(self, role: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [e for e in self.entries if e["role"] == role]
        X = np.stack([read_wv01(self.root / e["input"])[0] for e in rows])
        Y = np.stack([read_wv01(self.root / e["reference"])[0] for e in rows])
        return X, Y

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps({"config_hash": self.config_hash, "entries": self.entries}, indent=1, sort_keys=True))
        return path


def _workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _parallel_map(fn, items):
    n = _workers()
    if n == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def _store_pair(args) -> dict:
    cfg, s, root = args
    pair = make_pair(cfg, s)
    rel = Path(s.cell) / f"{s.index:05d}"
    d = root / rel
    save_record(pair["capture"], d / "capture")
    save_record(pair["reference_capture"], d / "capture_ref")
    write_wv01(d / "input.wv", pair["input"], FS_TOTAL)
    write_wv01(d / "reference.wv", pair["reference"], FS_TOTAL)
    entry = s.to_dict()
    entry.update(
        input=str(rel / "input.wv"),
        reference=str(rel / "reference.wv"),
        capture=str(rel / "capture"),
        reference_capture=str(rel / "capture_ref"),
        lag=pair["lag"],
    )
    return entry


def build_dataset(cfg: ExperimentConfig, out_dir) -> DatasetManifest:
    """Generate, align and store every training and testing pair."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(cfg.to_json())
    entries = _parallel_map(_store_pair, [(cfg, s, root) for s in dataset_samples(cfg)])
    manifest = DatasetManifest(root, cfg.config_hash(), entries)
    manifest.save()
    return manifest


def load_dataset(data_dir) -> DatasetManifest:
    root = Path(data_dir)
    meta = json.loads((root / "manifest.json").read_text())
    return DatasetManifest(root, meta["config_hash"], meta["entries"])


# ---------------------------------------------------------------- evaluation

REPORT_COLUMNS = [
    "variant",
    "dataset",
    "kind",
    "band_lo_hz",
    "band_hi_hz",
    "mismatch_ps",
    "amplitude_v",
    "state",
    "cut",
    "n_records",
    "image_before_db",
    "image_crae_db",
    "image_baseline_db",
    "image_rel_before_db",
    "image_rel_crae_db",
    "image_rel_baseline_db",
    "suppression_crae_db",
    "suppression_baseline_db",
    "signal_before_db",
    "signal_crae_db",
    "signal_baseline_db",
    "signal_reference_db",
    "floor_before_db",
    "floor_crae_db",
    "floor_baseline_db",
    "baseline_failures",
]


def evaluate_pair(compensate, x: np.ndarray, ref: np.ndarray, sample: Sample, aligned: CaptureRecord | None = None, baseline: bool = True) -> dict:
    """Spur metrics of one record before and after each compensator."""
    f_lo, f_hi = sample.spec.f_start, sample.spec.f_stop
    before = measure_spur(x, FS_TOTAL, f_lo, f_hi)
    after = measure_spur(compensate(x), FS_TOTAL, f_lo, f_hi)
    refm = measure_spur(ref, FS_TOTAL, f_lo, f_hi)
    row = {
        "image_before_db": before.image_power,
        "image_crae_db": after.image_power,
        "image_rel_before_db": before.image_rel,
        "image_rel_crae_db": after.image_rel,
        "suppression_crae_db": before.image_power - after.image_power,
        "signal_before_db": before.fundamental_power,
        "signal_crae_db": after.fundamental_power,
        "signal_reference_db": refm.fundamental_power,
        "floor_before_db": before.noise_floor,
        "floor_crae_db": after.noise_floor,
        "baseline_failures": 0,
    }
    nan = float("nan")
    row.update(image_baseline_db=nan, image_rel_baseline_db=nan, suppression_baseline_db=nan, signal_baseline_db=nan, floor_baseline_db=nan)
    if baseline and aligned is not None:
        try:
            out = SkewCalibrator().fit_transform(aligned)
            b = measure_spur(out, FS_TOTAL, f_lo, f_hi)
            # baseline output is trimmed; compare against the equally trimmed input
            e = len(x) - len(out)
            bi = measure_spur(x[e // 2 : len(x) - e // 2], FS_TOTAL, f_lo, f_hi)
            row.update(
                image_baseline_db=b.image_power,
                image_rel_baseline_db=b.image_rel,
                suppression_baseline_db=bi.image_power - b.image_power,
                signal_baseline_db=b.fundamental_power,
                floor_baseline_db=b.noise_floor,
            )
        except CalibrationError as exc:
            log.info("baseline failed on %s/%d: %s", sample.cell, sample.index, exc)
            row["baseline_failures"] = 1
    return row


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def aggregate(rows: list[dict], variant: str) -> list[dict]:
    """Average per-record rows into one row per cell, in first-seen order."""
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault(r["_key"], []).append(r)
    out = []
    for key, group in cells.items():
        dataset, kind, lo, hi, mm, amp, state, cut = key
        row = {
            "variant": variant,
            "dataset": dataset,
            "kind": kind,
            "band_lo_hz": lo,
            "band_hi_hz": hi,
            "mismatch_ps": mm,
            "amplitude_v": amp,
            "state": state,
            "cut": cut,
            "n_records": len(group),
        }
        for col in REPORT_COLUMNS[10:]:
            vals = np.array([g[col] for g in group], dtype=float)
            if col == "baseline_failures":
                row[col] = int(vals.sum())
            else:
                ok = vals[np.isfinite(vals)]
                row[col] = float(ok.mean()) if ok.size else float("nan")
        out.append(row)
    return out


def write_report(rows: list[dict], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in REPORT_COLUMNS:
            if c not in ("variant", "dataset", "kind", "cut"):
                r[c] = float(r[c])
    return rows


def summarize(rows: list[dict]) -> dict:
    """Mean suppression per dataset and per mismatch degree."""
    out: dict = {}
    for r in rows:
        d = out.setdefault(r["dataset"], {"cells": 0, "crae": [], "baseline": []})
        d["cells"] += 1
        d["crae"].append(r["suppression_crae_db"])
        d["baseline"].append(r["suppression_baseline_db"])
    summary = {}
    for name, d in out.items():
        crae = np.array(d["crae"], dtype=float)
        base = np.array(d["baseline"], dtype=float)
        summary[name] = {
            "cells": d["cells"],
            "mean_suppression_crae_db": round(float(np.nanmean(crae)), 6) if np.isfinite(crae).any() else None,
            "mean_suppression_baseline_db": round(float(np.nanmean(base)), 6) if np.isfinite(base).any() else None,
        }
    return summary


def _row_key(s: Sample, dataset: str) -> tuple:
    lo, hi = _band_of(s)
    return (dataset, s.spec.kind.value, lo, hi, s.mismatch_ps, s.spec.amplitude, s.state.id, s.cut)


def _band_of(s: Sample) -> tuple[float, float]:
    # cell band is encoded in the cell name; recover the enclosing configured band
    lo, hi = s.cell.split("_")[2].replace("GHz", "").split("-")
    return float(lo) * 1e9, float(hi) * 1e9


def evaluate_records(est: CRAECompensator, pairs: list[dict], dataset: str, baseline: bool = True) -> list[dict]:
    rows = []
    for p in pairs:
        s = p["sample"]
        r = evaluate_pair(lambda v: infer_record(est.model_, v), p["input"], p["reference"], s, p.get("aligned_input"), baseline)
        r["_key"] = _row_key(s, dataset)
        rows.append(r)
    return rows


def _pairs_from_manifest(cfg: ExperimentConfig, manifest: DatasetManifest, role: str) -> list[dict]:
    from .sampler import load_record

    pairs = []
    for e in manifest.entries:
        if e["role"] != role:
            continue
        s = Sample.from_dict(e)
        cap = load_record(manifest.root / e["capture"])
        lag = int(e["lag"])
        n = cfg.signal_len
        aligned = cap.with_channels(cap.ch0[lag : lag + n], cap.ch1[lag : lag + n], signal_start=max(s.signal_start - lag, 0))
        pairs.append(
            {
                "sample": s,
                "input": read_wv01(manifest.root / e["input"])[0],
                "reference": read_wv01(manifest.root / e["reference"])[0],
                "aligned_input": aligned,
            }
        )
    return pairs


def write_loss_csv(history: dict, path) -> None:
    test = dict(zip(history.get("test_epoch", []), history.get("test_loss", [])))
    full = dict(zip(history.get("full_test_epoch", []), history.get("full_test_loss", [])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "test_loss", "full_test_loss"])
    for i, tl in enumerate(history["train_loss"], start=1):
        w.writerow([i, f"{tl:.9g}", f"{test[i]:.9g}" if i in test else "", f"{full[i]:.9g}" if i in full else ""])
    Path(path).write_text(buf.getvalue())


def run_training_campaign(cfg: ExperimentConfig, data_dir, out_dir, train_mismatches_ps=None) -> tuple[Checkpoint, list[dict]]:
    """Train on the training cells, evaluate on Testing Datasets 0 and 1.

    ``train_mismatches_ps`` restricts training to a subset of mismatch
    degrees (the single-mismatch ablation).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_dataset(data_dir)
    train_rows = [e for e in manifest.entries if e["role"] == "train"]
    if train_mismatches_ps is not None:
        keep = {float(m) for m in train_mismatches_ps}
        train_rows = [e for e in train_rows if float(e["mismatch_ps"]) in keep]
        if not train_rows:
            raise ValueError("no training records at the requested mismatches")
    X = np.stack([read_wv01(manifest.root / e["input"])[0] for e in train_rows])
    Y = np.stack([read_wv01(manifest.root / e["reference"])[0] for e in train_rows])
    Xt, Yt = manifest.arrays("test0")
    est = CRAECompensator(**cfg.crae.to_dict())
    est.fit(X, Y, eval_set=(Xt, Yt))
    ckpt = est.checkpoint_
    variant = cfg.crae.variant.value
    save_checkpoint(ckpt, out / f"{variant.lower()}.bin")
    write_loss_csv(ckpt.history, out / "loss.csv")
    rows = []
    for role in ("test0", "test1"):
        rows += evaluate_records(est, _pairs_from_manifest(cfg, manifest, role), role)
    report = aggregate(rows, variant)
    write_report(report, out / "report.csv")
    (out / "summary.json").write_text(json.dumps(summarize(report), indent=2, sort_keys=True))
    write_run_manifest(out, cfg, "train")
    return ckpt, report


def eval_samples(cfg: ExperimentConfig) -> list[tuple[str, Sample]]:
    """State 1-3 sweep cells including the large-mismatch boundary."""
    out = []
    i = 0
    k = cfg.eval_records_per_cell

    def add(dataset, kind, band, mm, amp, state, cut):
        nonlocal i
        for _ in range(k):
            out.append((dataset, make_sample(cfg, "eval", i, kind, band, mm, amp, state, cut)))
            i += 1

    for band in cfg.bands:
        for mm in cfg.eval_mismatches_ps:
            dataset = "boundary" if mm > 160 else "state1"
            if 1 in cfg.states:
                for amp in cfg.amplitudes_v:
                    add(dataset, "LFM", band, mm, amp, 1, "xcorr")
                add(dataset, "Costas", band, mm, 1.0, 1, "xcorr")
            if 2 in cfg.states:
                add("state2", "Costas", band, mm, 1.0, 2, "online")
            if 3 in cfg.states:
                add("state3", "LFM", band, mm, 1.0, 3, "online")
    return out


def state_power_comparison(cfg: ExperimentConfig, est: CRAECompensator) -> dict:
    """Signal power of a compensated State-3 LFM vs 0-ps references under States 3 and 1."""
    base = make_sample(cfg, "eval", 10_000_000, "LFM", cfg.bands[0], 61.0, 1.0, 3)
    s3 = replace(base, cell=cell_name("eval", "LFM", cfg.bands[0], 61.0, 1.0, 3))
    s1 = replace(base, state=cfg.state(1))
    p3 = make_pair(cfg, s3)
    p1 = make_pair(cfg, s1)
    f = (s3.spec.f_start, s3.spec.f_stop)
    comp = infer_record(est.model_, p3["input"])
    return {
        "band_hz": list(f),
        "mismatch_ps": 61.0,
        "compensated_state3_db": measure_spur(comp, FS_TOTAL, *f).fundamental_power,
        "reference_state3_db": measure_spur(p3["reference"], FS_TOTAL, *f).fundamental_power,
        "reference_state1_db": measure_spur(p1["reference"], FS_TOTAL, *f).fundamental_power,
    }


def run_eval_sweep(checkpoint, cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Compensate every sweep cell with the network and the baseline; write the report."""
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    est = CRAECompensator(**checkpoint.config.to_dict())
    est.model_ = checkpoint.to_model()
    est.checkpoint_ = checkpoint
    rows = []
    for dataset, s in eval_samples(cfg):
        p = make_pair(cfg, s)
        r = evaluate_pair(lambda v: infer_record(est.model_, v), p["input"], p["reference"], s, p["aligned_input"])
        r["_key"] = _row_key(s, dataset)
        rows.append(r)
    report = aggregate(rows, checkpoint.config.variant.value)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "sweep.csv")
        summary = summarize(report)
        summary["state_power"] = {k: (round(v, 6) if isinstance(v, float) else v) for k, v in state_power_comparison(cfg, est).items()}
        (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        write_run_manifest(out, cfg, "eval")
    return report


def write_run_manifest(out_dir, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> Path:
    import platform

    import scipy
    import sklearn

    info = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seeds": {"experiment": cfg.seed, "crae": cfg.crae.seed},
        "versions": {
            "tiadc_crae": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        info.update(extra)
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(info, indent=2, sort_keys=True))
    return path
