"""Classical blind gain/timing-skew calibration baseline.

Gain is estimated from channel RMS. Skew is found either by a search that
minimizes image-band power after fractional-delay correction, or by a
first-order Taylor LMS loop that predicts channel 1 from channel 0. Both
assume the signal sits in the first Nyquist zone of a single channel; for
signals above ``fs/4`` the correction model is wrong. The single-pass LMS
estimate is also biased towards zero as ``sin(w*dt)/w``, so its accuracy
falls with the size of the mismatch.
"""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import measure_spur
from .sampler import CaptureRecord, fractional_delay, interleave
from .validation import check_capture

__all__ = [
    "CORRECTOR_TAPS",
    "DIFFERENTIATOR_TAPS",
    "CalibrationError",
    "estimate_gain",
    "estimate_skew_search",
    "estimate_skew_lms",
    "calibrate",
    "differentiator",
    "SkewCalibrator",
]

log = logging.getLogger(__name__)

CORRECTOR_TAPS = 63
DIFFERENTIATOR_TAPS = 31
MIN_SIGNAL_RMS = 1e-2


class CalibrationError(RuntimeError):
    pass


def _signal_window(rec: CaptureRecord) -> slice:
    n = int(np.ceil(rec.spec.duration * rec.channel_rate))
    start = min(max(rec.signal_start, 0), rec.ch0.size)
    return slice(start, min(start + n, rec.ch0.size))


def estimate_gain(ch0, ch1, min_rms: float = MIN_SIGNAL_RMS) -> float:
    """RMS(ch0) / RMS(ch1): the factor that matches channel 1 to channel 0."""
    r0 = float(np.sqrt(np.mean(np.square(ch0))))
    r1 = float(np.sqrt(np.mean(np.square(ch1))))
    if min(r0, r1) < min_rms:
        raise CalibrationError(f"channel RMS {min(r0, r1):.3g} V below {min_rms} V: no signal to calibrate on")
    return r0 / r1


def _ps_to_samples(rec: CaptureRecord, ps: float) -> float:
    return ps * 1e-12 * rec.channel_rate


def _corrected(rec: CaptureRecord, gain: float, skew_ps: float, taps: int = CORRECTOR_TAPS) -> np.ndarray:
    # channel 1 sampled late by the skew; delaying its sequence by the skew undoes it
    ch1 = fractional_delay(gain * rec.ch1, _ps_to_samples(rec, skew_ps), taps)
    e = (taps - 1) // 2
    return interleave(rec.ch0, ch1)[2 * e : 2 * (rec.ch0.size - e)]


def calibrate(rec: CaptureRecord, gain: float, skew_ps: float, taps: int = CORRECTOR_TAPS) -> np.ndarray:
    """Scale channel 1, delay it by the skew, interleave, and trim the filter's edge samples."""
    check_capture(rec)
    return _corrected(rec, gain, skew_ps, taps)


def estimate_skew_search(
    rec: CaptureRecord,
    search_range: tuple[float, float] = (-300.0, 300.0),
    tol: float = 0.5,
    band: tuple[float, float] | None = None,
    grid_step: float = 20.0,
) -> float:
    """Skew (ps) minimizing image-band power of the corrected record.

    A coarse grid brackets the minimum, then golden-section search refines it
    to ``tol``. A minimum on the edge of ``search_range`` means the objective
    is not bracketed and raises :class:`CalibrationError`.
    """
    check_capture(rec)
    lo, hi = search_range
    if not -300.0 <= lo < hi <= 300.0:
        raise ValueError("search range must lie within +-300 ps")
    if tol < 0.1:
        raise ValueError("tol must be >= 0.1 ps")
    f_lo, f_hi = band or (rec.spec.f_start, rec.spec.f_stop)
    win = _signal_window(rec)
    sub = rec.with_channels(rec.ch0[win], rec.ch1[win], signal_start=0)
    gain = estimate_gain(sub.ch0, sub.ch1)

    def image_power(d: float) -> float:
        return measure_spur(_corrected(sub, gain, d), rec.fs_total, f_lo, f_hi).image_power

    grid = np.arange(lo, hi + 1e-9, grid_step)
    vals = np.array([image_power(d) for d in grid])
    i = int(np.argmin(vals))
    if i in (0, grid.size - 1):
        raise CalibrationError(
            f"image power minimum at search edge {grid[i]:.1f} ps; objective values {np.round(vals, 1).tolist()}"
        )
    a, b = grid[i - 1], grid[i + 1]
    ratio = (np.sqrt(5) - 1) / 2
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = image_power(c), image_power(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = image_power(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = image_power(d)
    return float((a + b) / 2)


def differentiator(taps: int = DIFFERENTIATOR_TAPS) -> np.ndarray:
    """Blackman-windowed ideal differentiator (per-sample derivative)."""
    if taps % 2 == 0:
        raise ValueError("taps must be odd")
    m = np.arange(taps) - (taps - 1) // 2
    h = np.zeros(taps)
    nz = m != 0
    h[nz] = np.cos(np.pi * m[nz]) / m[nz]
    return h * np.blackman(taps)


def estimate_skew_lms(
    rec: CaptureRecord,
    mu: float = 0.05,
    iters: int = 2000,
    passes: int = 1,
) -> float:
    """Skew (ps) from a normalized LMS fit of ``ch1 ~ x_mid + delta * x_mid'``.

    ``x_mid`` interpolates channel 0 at the nominal channel-1 instants shifted
    by the current estimate, ``x_mid'`` is its FIR derivative. One pass is the
    plain first-order estimator; each further pass adapts the residual offset
    around the re-centered interpolation, shrinking the ``sin(w*delta)/w`` bias.
    """
    check_capture(rec)
    if not 0 < mu < 1:
        raise ValueError("mu must be in (0, 1)")
    if iters < 100:
        raise ValueError("iters must be >= 100")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    win = _signal_window(rec)
    ch0, ch1 = rec.ch0[win], rec.ch1[win]
    ch1 = estimate_gain(ch0, ch1) * ch1
    hd = differentiator()
    edge = (CORRECTOR_TAPS - 1) // 2 + (DIFFERENTIATOR_TAPS - 1) // 2
    valid = np.arange(edge, ch0.size - edge)
    if valid.size < 16:
        raise CalibrationError("signal window too short for LMS")
    # fixed visiting order: stride through the window so consecutive updates decorrelate
    visit = valid[(np.arange(iters) * 7919) % valid.size]
    delta = 0.0
    for _ in range(passes):
        xm = fractional_delay(ch0, -(0.5 + delta), CORRECTOR_TAPS)
        xd = np.convolve(xm, hd, mode="same")
        power = float(np.mean(xd[valid] ** 2))
        if power <= 0:
            raise CalibrationError("derivative has no energy; cannot adapt")
        step = 0.0
        first = last = 0.0
        for j, k in enumerate(visit):
            e = ch1[k] - xm[k] - step * xd[k]
            step += mu * e * xd[k] / power
            if j < 50:
                first += e * e
            elif j >= iters - 50:
                last += e * e
        if not np.isfinite(step) or abs(delta + step) > 3.0 or last > 4 * first + 1e-12:
            raise CalibrationError(f"LMS diverged (delta={delta + step:.3g} samples); use a smaller mu")
        delta += step
    return float(delta / rec.channel_rate * 1e12)


class SkewCalibrator(TransformerMixin, BaseEstimator):
    """Blind calibration as an estimator: ``fit`` estimates, ``transform`` corrects.

    ``X`` is a single :class:`CaptureRecord`.
    """

    def __init__(self, method="lms", tol=0.5, mu=0.05, iters=2000, passes=1, taps=CORRECTOR_TAPS):
        self.method = method
        self.tol = tol
        self.mu = mu
        self.iters = iters
        self.passes = passes
        self.taps = taps

    def fit(self, X, y=None):
        rec = check_capture(X)
        win = _signal_window(rec)
        self.gain_ = estimate_gain(rec.ch0[win], rec.ch1[win])
        if self.method == "search":
            self.skew_ps_ = estimate_skew_search(rec, tol=self.tol)
        elif self.method == "lms":
            self.skew_ps_ = estimate_skew_lms(rec, mu=self.mu, iters=self.iters, passes=self.passes)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "skew_ps_")
        return calibrate(check_capture(X), self.gain_, self.skew_ps_, self.taps)
