"""Spectral measurements: FFT/STFT magnitude, spur and noise-floor powers.

Magnitudes are normalized by ``n/2`` so a unit-amplitude tone at a bin
center reads 0 dB. Band powers are sums of squared normalized magnitudes.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import get_window

__all__ = [
    "FLOOR_DB",
    "Spectrum",
    "Spectrogram",
    "SpurReport",
    "fft_magnitude",
    "stft",
    "image_frequency",
    "band_power",
    "measure_spur",
    "mean_abs_error",
    "write_spectrum_csv",
    "write_stft_csv",
]

FLOOR_DB = -200.0
GUARD_BINS = 5


def _to_db(mag: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag)
    return np.maximum(db, FLOOR_DB)


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    mag_db: np.ndarray
    fs: float
    n: int

    @property
    def magnitude(self) -> np.ndarray:
        return 10 ** (self.mag_db / 20)

    @property
    def bin_width(self) -> float:
        return self.fs / self.n


@dataclass(frozen=True)
class Spectrogram:
    times: np.ndarray
    freqs: np.ndarray
    mag_db: np.ndarray  # (num_frames, win_len // 2 + 1)


@dataclass(frozen=True)
class SpurReport:
    fundamental_band: tuple[float, float]
    fundamental_power: float
    image_band: tuple[float, float]
    image_power: float
    image_rel: float
    noise_floor: float
    overlapping: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def fft_magnitude(v, fs: float) -> Spectrum:
    """One-sided, rectangular-window magnitude spectrum."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("empty input")
    if v.size < 64:
        raise ValueError("need at least 64 samples")
    n = v.size
    mag = np.abs(np.fft.rfft(v)) / (n / 2)
    return Spectrum(np.arange(mag.size) * fs / n, _to_db(mag), float(fs), n)


def stft(v, fs: float, win_len: int = 256, hop: int = 64) -> Spectrogram:
    """Hann-windowed magnitude STFT, normalized so a unit tone reads ~0 dB."""
    v = np.asarray(v, dtype=float)
    if win_len > v.size:
        raise ValueError("window longer than the input")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    window = get_window("hann", win_len)
    frames = np.lib.stride_tricks.sliding_window_view(v, win_len)[::hop]
    mag = np.abs(np.fft.rfft(frames * window, axis=1)) / (window.sum() / 2)
    times = (np.arange(frames.shape[0]) * hop + win_len / 2) / fs
    return Spectrogram(times, np.arange(win_len // 2 + 1) * fs / win_len, _to_db(mag))


def image_frequency(f: float, fs: float) -> float:
    """Frequency of the two-channel timing-mismatch image of a component at ``f``."""
    if not 0 < f < fs / 2:
        raise ValueError(f"f = {f} outside (0, fs/2)")
    return fs / 2 - f


def band_power(spec: Spectrum, lo: float, hi: float) -> float:
    """Total power (dB) over bins in ``[lo, hi]``; -200 dB when the band is empty."""
    sel = (spec.freqs >= lo) & (spec.freqs <= hi)
    p = float(np.sum(spec.magnitude[sel] ** 2))
    return max(10 * np.log10(p), FLOOR_DB) if p > 0 else FLOOR_DB


def measure_spur(v, fs: float, f_lo: float, f_hi: float, guard_bins: int = GUARD_BINS) -> SpurReport:
    """Fundamental, image and noise-floor levels for a signal occupying ``[f_lo, f_hi]``.

    The image band is the fundamental band mirrored about ``fs/4``. When the
    two (guarded) bands intersect the report is flagged ``overlapping`` and
    ``image_rel`` is NaN.
    """
    if not 0 < f_lo <= f_hi < fs / 2:
        raise ValueError("signal band must lie inside (0, fs/2)")
    spec = fft_magnitude(v, fs)
    g = guard_bins * spec.bin_width
    fund = (f_lo - g, f_hi + g)
    img = (fs / 2 - f_hi - g, fs / 2 - f_lo + g)
    overlapping = img[0] <= fund[1] and fund[0] <= img[1]
    p_fund = band_power(spec, *fund)
    p_img = band_power(spec, *img)
    outside = ~(((spec.freqs >= fund[0]) & (spec.freqs <= fund[1])) | ((spec.freqs >= img[0]) & (spec.freqs <= img[1])))
    outside[0] = False  # DC
    floor = float(np.median(spec.mag_db[outside])) if outside.any() else FLOOR_DB
    rel = float("nan") if overlapping else p_img - p_fund
    return SpurReport(
        (f_lo, f_hi),
        p_fund,
        (fs / 2 - f_hi, fs / 2 - f_lo),
        p_img,
        rel,
        floor,
        overlapping,
    )


def mean_abs_error(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def write_spectrum_csv(spec: Spectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "mag_db"])
        for f, m in zip(spec.freqs, spec.mag_db):
            w.writerow([repr(float(f)), repr(float(m))])


def write_stft_csv(sg: Spectrogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [repr(float(f)) for f in sg.freqs])
        for t, row in zip(sg.times, sg.mag_db):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
