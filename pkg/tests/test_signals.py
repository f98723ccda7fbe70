import itertools

import numpy as np
import pytest

from tiadc_crae.signals import (
    WaveformKind,
    WaveformSpec,
    downsample,
    eval_waveform,
    instantaneous_frequency,
    is_costas,
    make_costas_permutation,
    random_waveform,
    read_wv01,
    render_reference,
    welch_costas,
    write_wv01,
)


def lfm(f0=2.0e9, f1=3.3e9, dur=1e-6, amp=1.0, phase0=0.0):
    return WaveformSpec("LFM", f0, f1, dur, amp, phase0)


def costas_brute(perm):
    # independent oracle: every displacement vector between two dots is unique
    pts = [(i, p) for i, p in enumerate(perm)]
    seen = set()
    for a, b in itertools.permutations(pts, 2):
        d = (b[0] - a[0], b[1] - a[1])
        if d in seen:
            return False
        seen.add(d)
    return True


class TestWaveformSpec:
    def test_rejects_bad_band(self):
        with pytest.raises(ValueError):
            WaveformSpec("LFM", 3e9, 2e9, 1e-6)

    def test_rejects_nonpositive_amplitude(self):
        with pytest.raises(ValueError):
            WaveformSpec("Tone", 1e9, 1e9, 1e-6, amplitude=0.0)

    def test_rejects_non_costas_perm(self):
        with pytest.raises(ValueError):
            WaveformSpec("Costas", 2e9, 3e9, 1e-6, costas_perm=(1, 2, 3))

    def test_round_trip_dict(self):
        s = WaveformSpec("Costas", 2e9, 3e9, 1e-6, 0.6, 1.2, (3, 2, 6, 4, 5, 1))
        assert WaveformSpec.from_dict(s.to_dict()) == s
        assert s.costas_order == 6


class TestEvalWaveform:
    def test_lfm_at_zero(self):
        assert eval_waveform(lfm(), 0.0) == pytest.approx(1.0)

    def test_lfm_closed_form(self):
        s = lfm(phase0=0.3, amp=0.7)
        t = np.linspace(0, 1e-6, 101)
        k = (s.f_stop - s.f_start) / (2 * s.duration)
        want = 0.7 * np.cos(0.3 + 2 * np.pi * (s.f_start * t + k * t * t))
        np.testing.assert_allclose(eval_waveform(s, t), want, atol=1e-12)

    def test_zero_outside_window(self):
        v = eval_waveform(lfm(), np.array([-1e-9, 1.0000001e-6, 5e-6]))
        assert np.all(v == 0.0)

    @pytest.mark.parametrize("bad", [np.nan, -np.inf])
    def test_domain_error(self, bad):
        with pytest.raises(ValueError):
            eval_waveform(lfm(), np.array([0.0, bad]))

    def test_costas_phase_continuity(self):
        s = WaveformSpec("Costas", 2e9, 3e9, 1e-6, costas_perm=(3, 2, 6, 4, 5, 1))
        for k in range(1, 6):
            tb = k * s.duration / 6
            for eps in (1e-13, 1e-14):
                jump = abs(eval_waveform(s, tb - eps) - eval_waveform(s, tb + eps))
                assert jump < 2 * np.pi * 3e9 * 2 * eps + 1e-9

    def test_costas_hop_tone(self):
        perm = (3, 2, 6, 4, 5, 1)
        s = WaveformSpec("Costas", 2e9, 3e9, 1e-6, costas_perm=perm)
        f = 2e9 + (np.array(perm) - 1) / 5 * 1e9
        np.testing.assert_allclose(s.hop_frequencies(), f)


class TestInstantaneousFrequency:
    def test_lfm_midpoint_and_end(self):
        s = lfm()
        assert instantaneous_frequency(s, 0.5e-6) == pytest.approx(2.65e9)
        assert instantaneous_frequency(s, 1e-6) == pytest.approx(3.3e9)

    def test_tone(self):
        s = WaveformSpec("Tone", 7e9, 7e9, 1e-6)
        np.testing.assert_allclose(instantaneous_frequency(s, np.array([0, 3e-7, 9e-7])), 7e9)

    def test_costas_hop0(self):
        s = WaveformSpec("Costas", 2e9, 3e9, 1e-6, costas_perm=(3, 2, 6, 4, 5, 1))
        assert instantaneous_frequency(s, 1e-8) == pytest.approx(2e9 + 2 / 5 * 1e9)

    def test_matches_numeric_phase_derivative(self):
        s = lfm(phase0=0.4)
        t = np.linspace(1e-7, 9e-7, 9)
        dt = 1e-15
        # unwrap through arccos is fragile; differentiate the analytic signal phase instead
        k = (s.f_stop - s.f_start) / (2 * s.duration)
        phase = lambda tt: 2 * np.pi * (s.f_start * tt + k * tt * tt)
        num = (phase(t + dt) - phase(t - dt)) / (2 * dt) / (2 * np.pi)
        np.testing.assert_allclose(instantaneous_frequency(s, t), num, rtol=1e-6)


class TestCostas:
    def test_order_one(self):
        assert make_costas_permutation(1) == (1,)

    def test_order_six_welch(self):
        assert make_costas_permutation(6) == (3, 2, 6, 4, 5, 1)
        assert welch_costas(7) == (3, 2, 6, 4, 5, 1)

    @pytest.mark.parametrize("order", [2, 3, 4, 5, 6, 7, 8, 10, 12])
    def test_verified_by_brute_force(self, order):
        perm = make_costas_permutation(order, seed=3)
        assert sorted(perm) == list(range(1, order + 1))
        assert costas_brute(perm)
        assert is_costas(perm)

    def test_is_costas_agrees_with_oracle(self):
        for perm in itertools.permutations(range(1, 6)):
            assert is_costas(perm) == costas_brute(perm)

    def test_search_budget_exhausted(self):
        with pytest.raises(RuntimeError):
            make_costas_permutation(9, seed=0, budget=1)


class TestRenderReference:
    def test_quarter_period_tone(self):
        s = WaveformSpec("Tone", 1.0, 1.0, 10.0)
        np.testing.assert_allclose(render_reference(s, 4.0, 4), [1, 0, -1, 0], atol=1e-12)

    def test_padding_tail(self):
        v = render_reference(lfm(), 60e9, 70_000)
        assert np.count_nonzero(v[:60_000]) > 59_000
        assert np.all(v[60_001:] == 0.0)

    @pytest.mark.parametrize("rate,n", [(0.0, 10), (-1.0, 10), (1e9, 0)])
    def test_errors(self, rate, n):
        with pytest.raises(ValueError):
            render_reference(lfm(), rate, n)

    def test_decimation_is_exact(self):
        s = WaveformSpec("Costas", 7e9, 8.3e9, 1e-6, 1.0, 0.9, (3, 2, 6, 4, 5, 1))
        hi = downsample(render_reference(s, 60e9, 60_000), 6)
        lo = render_reference(s, 10e9, 10_000)
        assert np.array_equal(hi, lo)

    @pytest.mark.parametrize("kind", ["LFM", "Costas"])
    def test_band_containment(self, kind):
        rng = np.random.default_rng(5)
        s = random_waveform(kind, (2.0e9, 3.3e9), rng)
        v = render_reference(s, 60e9, 60_000)
        p = np.abs(np.fft.rfft(v)) ** 2
        f = np.fft.rfftfreq(v.size, 1 / 60e9)
        # a Costas hop is a rectangular burst, so its spectral width is set by the hop length
        g = 3 / s.duration if kind == "LFM" else 3 * s.costas_order / s.duration
        inside = p[(f >= s.f_start - g) & (f <= s.f_stop + g)].sum()
        assert inside / p.sum() >= 0.99


class TestDownsample:
    def test_lengths(self):
        assert downsample(np.zeros(60_000), 6).size == 10_000
        assert downsample(np.zeros(7), 3).size == 3

    def test_examples(self):
        np.testing.assert_array_equal(downsample([1, 2, 3, 4, 5, 6], 3), [1, 4])
        np.testing.assert_array_equal(downsample([1, 2, 3], 1), [1, 2, 3])

    def test_zero_factor(self):
        with pytest.raises(ValueError):
            downsample([1, 2], 0)


class TestRandomWaveform:
    @pytest.mark.parametrize("kind", list(WaveformKind))
    def test_inside_band(self, kind):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = random_waveform(kind, (7.0e9, 8.3e9), rng, 0.5)
            assert 7.0e9 <= s.f_start <= s.f_stop <= 8.3e9
            assert 0 <= s.phase0 < 2 * np.pi
            if kind is not WaveformKind.TONE:
                assert s.f_stop - s.f_start >= 0.4e9 - 1

    def test_seeded(self):
        a = random_waveform("LFM", (2e9, 3.3e9), np.random.default_rng(4))
        b = random_waveform("LFM", (2e9, 3.3e9), np.random.default_rng(4))
        assert a == b


class TestWV01:
    def test_round_trip(self, tmp_path):
        v = np.random.default_rng(0).normal(size=257)
        write_wv01(tmp_path / "a.wv", v, 20e9)
        got, rate = read_wv01(tmp_path / "a.wv")
        assert rate == 20e9
        np.testing.assert_array_equal(got, v.astype(np.float32).astype(np.float64))

    def test_layout(self, tmp_path):
        write_wv01(tmp_path / "a.wv", [1.0, -2.0], 10e9)
        raw = (tmp_path / "a.wv").read_bytes()
        assert raw[:4] == b"WV01"
        assert int.from_bytes(raw[4:8], "little") == 2
        assert np.frombuffer(raw[8:16], "<f8")[0] == 10e9
        np.testing.assert_array_equal(np.frombuffer(raw[16:], "<f4"), [1.0, -2.0])

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "b.wv").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(ValueError):
            read_wv01(tmp_path / "b.wv")
        write_wv01(tmp_path / "c.wv", np.ones(4), 1.0)
        raw = (tmp_path / "c.wv").read_bytes()
        (tmp_path / "c.wv").write_bytes(raw[:-2])
        with pytest.raises(ValueError):
            read_wv01(tmp_path / "c.wv")
