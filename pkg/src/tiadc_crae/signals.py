"""Closed-form test waveforms (LFM chirps, Costas hopped tones, single tones).

Everything here evaluates the analytic waveform at requested instants; there
is no interpolation anywhere in the signal path.
"""
from __future__ import annotations

import enum
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "WaveformKind",
    "WaveformSpec",
    "eval_waveform",
    "instantaneous_frequency",
    "is_costas",
    "welch_costas",
    "make_costas_permutation",
    "render_reference",
    "downsample",
    "random_waveform",
    "write_wv01",
    "read_wv01",
]

AWG_RATE = 60e9
DEFAULT_COSTAS_ORDER = 6


class WaveformKind(str, enum.Enum):
    LFM = "LFM"
    COSTAS = "Costas"
    TONE = "Tone"


@dataclass(frozen=True)
class WaveformSpec:
    """Analytic description of one signal fed to the sampler.

    Frequencies in Hz, duration in seconds, amplitude in volts. For Costas
    waveforms ``costas_perm`` holds a 1-based permutation whose ``k``-th entry
    selects the hop frequency of the ``k``-th time slot.
    """

    kind: WaveformKind
    f_start: float
    f_stop: float
    duration: float
    amplitude: float = 1.0
    phase0: float = 0.0
    costas_perm: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "kind", WaveformKind(self.kind))
        object.__setattr__(self, "costas_perm", tuple(int(p) for p in self.costas_perm))
        if not 0 < self.f_start <= self.f_stop:
            raise ValueError(f"need 0 < f_start <= f_stop, got {self.f_start}, {self.f_stop}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.kind is WaveformKind.COSTAS:
            if not self.costas_perm:
                raise ValueError("Costas waveform needs costas_perm")
            if not is_costas(self.costas_perm):
                raise ValueError(f"{self.costas_perm} is not a Costas permutation")

    @property
    def costas_order(self) -> int:
        return len(self.costas_perm)

    def hop_frequencies(self) -> np.ndarray:
        order = self.costas_order
        if order == 1:
            return np.array([self.f_start])
        perm = np.asarray(self.costas_perm, dtype=float)
        return self.f_start + (perm - 1.0) / (order - 1) * (self.f_stop - self.f_start)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "f_start": self.f_start,
            "f_stop": self.f_stop,
            "duration": self.duration,
            "amplitude": self.amplitude,
            "phase0": self.phase0,
            "costas_perm": list(self.costas_perm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WaveformSpec":
        return cls(
            kind=WaveformKind(d["kind"]),
            f_start=float(d["f_start"]),
            f_stop=float(d["f_stop"]),
            duration=float(d["duration"]),
            amplitude=float(d.get("amplitude", 1.0)),
            phase0=float(d.get("phase0", 0.0)),
            costas_perm=tuple(d.get("costas_perm", ())),
        )


def _as_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.isnan(t)) or np.any(np.isneginf(t)):
        raise ValueError("time instants must not be NaN or -inf")
    return t


def _hop_index(spec: WaveformSpec, t: np.ndarray) -> np.ndarray:
    order = spec.costas_order
    k = np.floor(t * order / spec.duration).astype(np.int64)
    return np.clip(k, 0, order - 1)


def _phase(spec: WaveformSpec, t: np.ndarray) -> np.ndarray:
    if spec.kind is WaveformKind.TONE:
        return spec.phase0 + 2 * np.pi * spec.f_start * t
    if spec.kind is WaveformKind.LFM:
        rate = (spec.f_stop - spec.f_start) / (2 * spec.duration)
        return spec.phase0 + 2 * np.pi * (spec.f_start * t + rate * t * t)
    # Costas: accumulate whole-hop phase so the waveform is continuous at boundaries
    freqs = spec.hop_frequencies()
    hop = spec.duration / spec.costas_order
    start_phase = np.concatenate([[0.0], np.cumsum(2 * np.pi * freqs * hop)])
    k = _hop_index(spec, t)
    return spec.phase0 + start_phase[k] + 2 * np.pi * freqs[k] * (t - k * hop)


def eval_waveform(spec: WaveformSpec, t):
    """Waveform value in volts at time(s) ``t``; zero outside ``[0, duration]``."""
    t = _as_time(t)
    inside = (t >= 0) & (t <= spec.duration)
    tt = np.where(inside, t, 0.0)
    out = np.where(inside, spec.amplitude * np.cos(_phase(spec, tt)), 0.0)
    return float(out) if out.ndim == 0 else out


def instantaneous_frequency(spec: WaveformSpec, t):
    t = _as_time(t)
    if np.any((t < 0) | (t > spec.duration)):
        raise ValueError("instantaneous frequency is defined on [0, duration] only")
    if spec.kind is WaveformKind.TONE:
        out = np.full_like(t, spec.f_start)
    elif spec.kind is WaveformKind.LFM:
        out = spec.f_start + (spec.f_stop - spec.f_start) * t / spec.duration
    else:
        out = spec.hop_frequencies()[_hop_index(spec, t)]
    return float(out) if out.ndim == 0 else out


def is_costas(perm) -> bool:
    """Brute-force distinct-difference-vector check over all point pairs."""
    perm = [int(p) for p in perm]
    n = len(perm)
    if sorted(perm) != list(range(1, n + 1)):
        return False
    seen = set()
    for i, j in itertools.combinations(range(n), 2):
        vec = (j - i, perm[j] - perm[i])
        if vec in seen:
            return False
        seen.add(vec)
    return True


def _is_prime(p: int) -> bool:
    return p >= 2 and all(p % d for d in range(2, math.isqrt(p) + 1))


def _primitive_root(p: int) -> int:
    if p == 2:
        return 1
    factors = {q for q in range(2, p) if (p - 1) % q == 0 and _is_prime(q)}
    for g in range(2, p):
        if all(pow(g, (p - 1) // q, p) != 1 for q in factors):
            return g
    raise ArithmeticError(f"no primitive root for {p}")


def welch_costas(p: int) -> tuple[int, ...]:
    """Welch construction ``a_i = g**i mod p`` for ``i = 1 .. p-1``."""
    if not _is_prime(p):
        raise ValueError(f"{p} is not prime")
    g = _primitive_root(p)
    return tuple(pow(g, i, p) for i in range(1, p))


def _search_costas(order: int, rng: np.random.Generator, budget: int):
    perm: list[int] = []
    used: set[int] = set()
    vectors: set[tuple[int, int]] = set()
    steps = 0

    def extend() -> bool:
        nonlocal steps
        if len(perm) == order:
            return True
        j = len(perm)
        for v in rng.permutation(order) + 1:
            steps += 1
            if steps > budget:
                return False
            v = int(v)
            if v in used:
                continue
            new = [(j - i, v - perm[i]) for i in range(j)]
            if any(d in vectors for d in new) or len(set(new)) != len(new):
                continue
            perm.append(v)
            used.add(v)
            vectors.update(new)
            if extend():
                return True
            perm.pop()
            used.discard(v)
            vectors.difference_update(new)
        return False

    return tuple(perm) if extend() else None


def make_costas_permutation(order: int, seed: int = 0, budget: int = 2_000_000) -> tuple[int, ...]:
    """Return a verified Costas permutation of ``1..order``.

    Orders of the form ``p - 1`` with ``p`` prime use the Welch construction
    with the smallest primitive root; other orders fall back to a seeded
    randomized backtracking search limited to ``budget`` candidate tries.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if _is_prime(order + 1):
        perm = welch_costas(order + 1)
    else:
        perm = _search_costas(order, np.random.default_rng(seed), budget)
        if perm is None:
            raise RuntimeError(f"no Costas array of order {order} found within {budget} tries")
    if not is_costas(perm):
        raise AssertionError(f"constructed permutation {perm} failed the Costas check")
    return perm


def render_reference(spec: WaveformSpec, rate: float, n: int) -> np.ndarray:
    """Ideal generator output ``v[i] = eval_waveform(spec, i / rate)``.

    Samples past ``spec.duration`` are zero padding.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if n <= 0:
        raise ValueError("n must be positive")
    # i / rate (not i * (1/rate)) keeps decimated grids bit-identical
    t = np.arange(n, dtype=float) / rate
    return eval_waveform(spec, t)


def downsample(v, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return np.asarray(v)[::factor].copy()


def random_waveform(
    kind,
    band: tuple[float, float],
    rng: np.random.Generator,
    amplitude: float = 1.0,
    duration: float = 1e-6,
    min_bandwidth: float = 0.4e9,
    costas_order: int = DEFAULT_COSTAS_ORDER,
) -> WaveformSpec:
    """Draw a sub-band waveform inside ``band`` with a random start phase."""
    kind = WaveformKind(kind)
    lo, hi = band
    if kind is WaveformKind.TONE:
        f = rng.uniform(lo, hi)
        return WaveformSpec(kind, f, f, duration, amplitude, rng.uniform(0, 2 * np.pi))
    if hi - lo < min_bandwidth:
        raise ValueError("band narrower than the minimum sub-band bandwidth")
    bw = rng.uniform(min_bandwidth, hi - lo)
    f0 = rng.uniform(lo, hi - bw)
    perm = make_costas_permutation(costas_order) if kind is WaveformKind.COSTAS else ()
    return WaveformSpec(kind, f0, f0 + bw, duration, amplitude, rng.uniform(0, 2 * np.pi), perm)


_WV_MAGIC = b"WV01"
_WV_HEADER = struct.Struct("<4sId")


def write_wv01(path, samples, rate: float) -> None:
    samples = np.asarray(samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_WV_HEADER.pack(_WV_MAGIC, samples.size, float(rate)))
        fh.write(samples.tobytes())


def read_wv01(path) -> tuple[np.ndarray, float]:
    """Read a WV01 file; returns ``(samples as float64, rate_hz)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _WV_HEADER.size or raw[:4] != _WV_MAGIC:
        raise ValueError(f"{path}: not a WV01 file")
    _, count, rate = _WV_HEADER.unpack_from(raw)
    body = raw[_WV_HEADER.size:]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: expected {count} samples, file holds {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64), rate
