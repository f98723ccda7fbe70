"""Two-channel time-interleaved sampler with injectable hardware deviations.

Channel 0 samples at ``n * Tc``; channel 1 at ``n * Tc + Tc/2 + skew``. Both
are evaluated analytically from the waveform's closed form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .signals import WaveformSpec, eval_waveform, read_wv01, write_wv01

__all__ = [
    "FS_TOTAL",
    "CHANNEL_RATE",
    "ChannelModel",
    "SystemState",
    "CaptureRecord",
    "default_state",
    "sample_two_channel",
    "interleave",
    "deinterleave",
    "fractional_delay",
    "quantize",
    "save_record",
    "load_record",
]

FS_TOTAL = 20e9
CHANNEL_RATE = FS_TOTAL / 2
DEFAULT_NOISE_SIGMA = 3e-3

STATE_GAIN = {0: 1.0, 1: 1.0, 2: 1.12, 3: 0.89}
STATE_NOISE = {0: 1.0, 1: 1.1, 2: 0.9, 3: 1.2}


@dataclass(frozen=True)
class ChannelModel:
    skew: float = 0.0
    gain: float = 1.0
    dc_offset: float = 0.0
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    quant_bits: int | None = None
    full_scale: float = 1.5

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.quant_bits is not None and not 4 <= self.quant_bits <= 16:
            raise ValueError("quant_bits must be in [4, 16]")


@dataclass(frozen=True)
class SystemState:
    """Random operating condition of the sampler (gain and noise drift)."""

    id: int = 0
    gain_mult: float = 1.0
    noise_mult: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.id not in (0, 1, 2, 3):
            raise ValueError("state id must be 0..3")

    def to_dict(self) -> dict:
        return {"id": self.id, "gain_mult": self.gain_mult, "noise_mult": self.noise_mult, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemState":
        return cls(int(d["id"]), float(d["gain_mult"]), float(d["noise_mult"]), int(d.get("seed", 0)))


def default_state(state_id: int, seed: int | None = None) -> SystemState:
    return SystemState(state_id, STATE_GAIN[state_id], STATE_NOISE[state_id], state_id if seed is None else seed)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CaptureRecord:
    ch0: np.ndarray
    ch1: np.ndarray
    spec: WaveformSpec
    skew: float
    state: SystemState = field(default_factory=SystemState)
    signal_start: int = 0
    seed: int = 0
    fs_total: float = FS_TOTAL

    def __post_init__(self):
        object.__setattr__(self, "ch0", _readonly(self.ch0))
        object.__setattr__(self, "ch1", _readonly(self.ch1))
        if self.ch0.shape != self.ch1.shape or self.ch0.ndim != 1:
            raise ValueError("channels must be 1-D and of equal length")

    @property
    def channel_rate(self) -> float:
        return self.fs_total / 2

    def interleaved(self) -> np.ndarray:
        return interleave(self.ch0, self.ch1)

    def with_channels(self, ch0, ch1, signal_start: int | None = None) -> "CaptureRecord":
        start = self.signal_start if signal_start is None else signal_start
        return replace(self, ch0=ch0, ch1=ch1, signal_start=start)


def quantize(v, bits: int, full_scale: float) -> np.ndarray:
    """Mid-tread uniform quantizer clamped at ``+-full_scale``."""
    if not 4 <= bits <= 16:
        raise ValueError("bits must be in [4, 16]")
    if full_scale <= 0:
        raise ValueError("full_scale must be positive")
    lsb = 2 * full_scale / 2**bits
    v = np.clip(np.asarray(v, dtype=float), -full_scale, full_scale)
    return np.clip(np.round(v / lsb) * lsb, -full_scale, full_scale)


def sample_two_channel(
    spec: WaveformSpec,
    skew: float,
    state: SystemState | None = None,
    record_len: int = 20_000,
    signal_start: int = 0,
    seed: int = 0,
    channels: tuple[ChannelModel, ChannelModel] | None = None,
    fs_total: float = FS_TOTAL,
) -> CaptureRecord:
    """Simulate one two-channel capture.

    ``skew`` (seconds) is added to channel 1's nominal half-period offset.
    Noise draws depend only on ``(seed, state.seed)``, so a 0-ps reference and
    its mismatched partner generated with the same seeds share identical noise.
    """
    state = state or SystemState()
    ch_models = channels or (ChannelModel(), ChannelModel())
    rate = fs_total / 2
    if record_len < signal_start + int(np.ceil(spec.duration * rate)):
        raise ValueError(
            f"record of {record_len} samples cannot hold a {spec.duration:g}-s signal starting at {signal_start}"
        )
    k = np.arange(record_len, dtype=float) - signal_start
    # channel k-th instants as exact fractions of the aggregate rate
    t0 = (2 * k) / fs_total + ch_models[0].skew
    t1 = (2 * k + 1) / fs_total + skew + ch_models[1].skew
    rng = np.random.default_rng([seed, state.seed])
    out = []
    for model, t in zip(ch_models, (t0, t1)):
        x = model.gain * state.gain_mult * eval_waveform(spec, t) + model.dc_offset
        sigma = model.noise_sigma * state.noise_mult
        x = x + sigma * rng.standard_normal(record_len)
        if model.quant_bits is not None:
            x = quantize(x, model.quant_bits, model.full_scale)
        out.append(x)
    return CaptureRecord(out[0], out[1], spec, float(skew), state, signal_start, seed, fs_total)


def interleave(ch0, ch1) -> np.ndarray:
    ch0 = np.asarray(ch0, dtype=float)
    ch1 = np.asarray(ch1, dtype=float)
    if ch0.shape != ch1.shape:
        raise ValueError(f"channel lengths differ: {ch0.shape} vs {ch1.shape}")
    out = np.empty(2 * ch0.size)
    out[0::2] = ch0
    out[1::2] = ch1
    return out


def deinterleave(v) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    if v.size % 2:
        raise ValueError("interleaved vector must have even length")
    return v[0::2].copy(), v[1::2].copy()


def fractional_delay(v, delay: float, taps: int = 63) -> np.ndarray:
    """Delay ``v`` by ``delay`` samples with a Blackman-windowed sinc FIR.

    Output has the input's length; the first and last ``(taps - 1) // 2``
    samples see the zero-extended edge and are not valid.
    """
    if taps % 2 == 0 or taps < 15:
        raise ValueError("taps must be odd and >= 15")
    if abs(delay) >= taps / 4:
        raise ValueError(f"|delay| must be < taps/4 = {taps / 4}")
    c = (taps - 1) // 2
    k = np.arange(taps)
    h = np.blackman(taps) * np.sinc(k - c - delay)
    h /= h.sum()
    return np.convolve(np.asarray(v, dtype=float), h, mode="same")


def save_record(rec: CaptureRecord, directory) -> Path:
    """Write ``ch0.wv``, ``ch1.wv`` and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wv01(d / "ch0.wv", rec.ch0, rec.channel_rate)
    write_wv01(d / "ch1.wv", rec.ch1, rec.channel_rate)
    manifest = {
        "spec": rec.spec.to_dict(),
        "skew_ps": rec.skew * 1e12,
        "state": rec.state.to_dict(),
        "seed": rec.seed,
        "signal_start": rec.signal_start,
        "fs_total": rec.fs_total,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_record(directory) -> CaptureRecord:
    d = Path(directory)
    meta = json.loads((d / "manifest.json").read_text())
    ch0, _ = read_wv01(d / "ch0.wv")
    ch1, _ = read_wv01(d / "ch1.wv")
    return CaptureRecord(
        ch0,
        ch1,
        WaveformSpec.from_dict(meta["spec"]),
        meta["skew_ps"] * 1e-12,
        SystemState.from_dict(meta["state"]),
        int(meta["signal_start"]),
        int(meta["seed"]),
        float(meta["fs_total"]),
    )
