import numpy as np
import pytest

from apa_metrics.audio import AudioBuffer
from apa_metrics.dynamics import (
    LIMITER_CEILING,
    MIX_REGIMES,
    integrated_loudness,
    limit,
    loudness_normalize,
    mix,
    mix_parts,
    peak_normalize,
    peak_of,
)
from apa_metrics.errors import GateFallbackWarning, SilentAudio, SilentPart, TooShort

from conftest import make_pair, sine


class TestPeak:
    def test_full_scale_is_zero_dbfs(self):
        assert peak_of(np.array([0.2, -1.0, 0.5])) == 0.0

    def test_half_scale(self):
        assert peak_of(np.array([0.5, -0.25])) == pytest.approx(-6.0206, abs=1e-4)

    def test_silence_raises(self):
        with pytest.raises(SilentAudio):
            peak_of(np.zeros(100))

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            peak_of(np.array([]))


class TestPeakNormalize:
    def test_analytic_gain(self):
        x = np.array([0.5, -0.1], dtype=np.float32)
        out = peak_normalize(x, -3.0)
        assert np.max(np.abs(out)) == pytest.approx(0.70795, abs=1e-5)
        assert out[0] / x[0] == pytest.approx(1.41589, abs=1e-4)

    def test_identity_at_current_peak(self):
        x = np.array([1.0, -0.5], dtype=np.float32)
        out = peak_normalize(x, 0.0)
        np.testing.assert_allclose(out, x, rtol=1e-6)

    def test_silence_raises(self):
        with pytest.raises(SilentAudio):
            peak_normalize(np.zeros(10), -3.0)

    def test_idempotent_within_1e6(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-0.8, 0.8, 1000).astype(np.float32)
        once = peak_normalize(x, -4.5)
        twice = peak_normalize(once, -4.5)
        np.testing.assert_allclose(twice, once, rtol=1e-6, atol=1e-9)


class TestIntegratedLoudness:
    def test_conformance_997hz_sine(self):
        # fixed point of the loudness standard: 0 dBFS 997 Hz sine reads -3.01
        buf = sine(997.0, 10.0)
        reading = integrated_loudness(buf)
        assert reading.lufs == pytest.approx(-3.01, abs=0.1)
        assert reading.gated_blocks >= 1

    def test_gain_linearity(self):
        buf = sine(997.0, 10.0)
        half = AudioBuffer(buf.samples * np.float32(0.5), buf.sample_rate)
        delta = integrated_loudness(buf).lufs - integrated_loudness(half).lufs
        assert delta == pytest.approx(6.0206, abs=0.05)

    def test_gain_linearity_on_noise(self):
        rng = np.random.default_rng(0)
        x = (0.25 * rng.standard_normal(5 * 48000)).astype(np.float32)
        buf = AudioBuffer(x, 48000)
        half = AudioBuffer(x * np.float32(0.5), 48000)
        delta = integrated_loudness(buf).lufs - integrated_loudness(half).lufs
        assert delta == pytest.approx(6.0206, abs=0.05)

    def test_silence_raises(self):
        with pytest.raises(SilentAudio):
            integrated_loudness(AudioBuffer(np.zeros(48000, np.float32), 48000))

    def test_too_short_raises(self):
        with pytest.raises(TooShort):
            integrated_loudness(sine(440, 0.3))

    def test_gate_fallback_on_very_quiet_signal(self):
        quiet = AudioBuffer((1e-5 * sine(440, 1.0).samples), 48000)
        with pytest.raises(SilentAudio):
            integrated_loudness(quiet)
        with pytest.warns(GateFallbackWarning):
            reading = integrated_loudness(quiet, gate_fallback=True)
        assert reading.gated_blocks == 0
        assert reading.lufs < -70.0

    def test_other_sample_rates_agree(self):
        for rate in (44100, 32000):
            buf = sine(997.0, 10.0, rate=rate)
            assert integrated_loudness(buf).lufs == pytest.approx(-3.01, abs=0.1)


class TestLoudnessNormalize:
    def test_gain_from_conformance_point(self):
        buf = sine(997.0, 10.0)  # -3.01 LUFS
        out = loudness_normalize(buf, -20.0)
        gain_db = 20 * np.log10(np.max(np.abs(out.samples)) / np.max(np.abs(buf.samples)))
        assert gain_db == pytest.approx(-16.99, abs=0.1)
        assert integrated_loudness(out).lufs == pytest.approx(-20.0, abs=0.1)

    def test_already_at_target_is_near_unity(self):
        buf = sine(997.0, 10.0)
        at_target = loudness_normalize(buf, -20.0)
        again = loudness_normalize(at_target, -20.0)
        gain_db = 20 * np.log10(
            np.max(np.abs(again.samples)) / np.max(np.abs(at_target.samples))
        )
        assert abs(gain_db) <= 0.1

    def test_silence_raises(self):
        with pytest.raises(SilentAudio):
            loudness_normalize(AudioBuffer(np.zeros(48000, np.float32), 48000), -20.0)


class TestLimit:
    def test_below_threshold_bit_identical(self):
        x = (0.9 * np.sin(np.linspace(0, 50, 48000))).astype(np.float32)
        np.testing.assert_array_equal(limit(x), x)

    def test_spike_is_brought_under_ceiling(self):
        x = (0.5 * np.sin(np.linspace(0, 50, 48000))).astype(np.float32)
        x[24000] = 1.5
        out = limit(x)
        assert np.max(np.abs(out)) <= LIMITER_CEILING

    def test_dc_overload_steady_state(self):
        out = limit(np.full(48000, 2.0, np.float32))
        assert np.max(np.abs(out)) <= LIMITER_CEILING
        # steady state settles at the ceiling, not below
        assert out[24000] == pytest.approx(LIMITER_CEILING, abs=1e-3)

    def test_gain_curve_is_smooth(self):
        # constant level with a hot burst: out/x recovers the gain envelope
        x = np.full(48000, 0.5, np.float32)
        x[10000:10100] = 2.0
        out = limit(x)
        gain = out.astype(np.float64) / x.astype(np.float64)
        # no jump discontinuities in the gain signal (attack ramps over 5 ms)
        assert np.max(np.abs(np.diff(gain))) < 0.02
        # it really attenuated the burst and released afterwards
        assert gain[10050] <= LIMITER_CEILING / 2.0 + 1e-6
        assert gain[12000] > gain[10200]

    def test_empty_input(self):
        assert limit(np.array([], np.float32)).size == 0


class TestMix:
    def test_regime_table_matches_definition(self):
        expected = {
            "PP": ("peak", None, None, True),
            "P0": ("peak", -3.0, -3.0, False),
            "P1": ("peak", -3.0, -6.0, False),
            "P2": ("peak", -3.0, -9.0, False),
            "L0": ("loudness", -20.0, -20.0, False),
            "L1": ("loudness", -20.0, -23.0, False),
            "L2": ("loudness", -20.0, -26.0, False),
        }
        assert set(MIX_REGIMES) == set(expected)
        for label, (kind, ct, st, preserve) in expected.items():
            regime = MIX_REGIMES[label]
            assert (regime.kind, regime.context_target,
                    regime.stem_target, regime.preserve_relative) == (kind, ct, st, preserve)

    def test_p1_per_part_targets(self):
        pair = make_pair(
            AudioBuffer(0.2 * sine(300, 1.0).samples, 48000),
            AudioBuffer(0.9 * sine(1200, 1.0).samples, 48000),
        )
        c, s, post = mix_parts(pair, "P1")
        assert post == 1.0
        assert np.max(np.abs(c)) == pytest.approx(0.70795, abs=1e-4)
        assert np.max(np.abs(s)) == pytest.approx(0.50119, abs=1e-4)

    def test_l0_identical_parts(self):
        base = sine(400, 2.0, amplitude=0.4)
        pair = make_pair(base, AudioBuffer(base.samples.copy(), 48000))
        out = mix(pair, "L0")
        # each normalized copy sits at -20 LUFS; the sum is limit(2 g s)
        c, s, post = mix_parts(pair, "L0")
        np.testing.assert_array_equal(c, s)
        assert integrated_loudness(AudioBuffer(c, 48000)).lufs == pytest.approx(-20.0, abs=0.1)
        expected = limit((c.astype(np.float64) + s.astype(np.float64)).astype(np.float32))
        np.testing.assert_array_equal(out.samples, expected)

    def test_l2_silent_stem_raises_with_side(self):
        pair = make_pair(sine(400, 1.0, amplitude=0.4),
                         AudioBuffer(np.zeros(48000, np.float32), 48000))
        with pytest.raises(SilentPart) as info:
            mix(pair, "L2")
        assert info.value.side == "stem"

    def test_pp_preserves_relative_levels(self):
        ctx = AudioBuffer(0.6 * sine(250, 1.0).samples, 48000)
        stm = AudioBuffer(0.15 * sine(1900, 1.0).samples, 48000)
        pair = make_pair(ctx, stm)
        c, s, post = mix_parts(pair, "PP")
        np.testing.assert_array_equal(c, ctx.samples)
        np.testing.assert_array_equal(s, stm.samples)
        mixed = (c.astype(np.float64) + s.astype(np.float64)) * post
        assert np.max(np.abs(mixed)) == pytest.approx(0.6, abs=1e-5)

    def test_pp_both_silent_raises(self):
        z = AudioBuffer(np.zeros(48000, np.float32), 48000)
        with pytest.raises(SilentPart):
            mix(make_pair(z, z), "PP")

    def test_mix_deterministic(self):
        rng = np.random.default_rng(9)
        ctx = AudioBuffer((0.3 * rng.standard_normal(48000)).astype(np.float32), 48000)
        stm = sine(700, 1.0, amplitude=0.5)
        pair = make_pair(ctx, stm)
        np.testing.assert_array_equal(mix(pair, "L1").samples, mix(pair, "L1").samples)

    def test_quiet_stem_uses_gate_fallback_not_error(self):
        ctx = sine(300, 1.0, amplitude=0.4)
        stm = AudioBuffer((2e-5 * sine(900, 1.0).samples), 48000)
        pair = make_pair(ctx, stm)
        with pytest.warns(GateFallbackWarning):
            out = mix(pair, "L0")
        assert np.max(np.abs(out.samples)) <= LIMITER_CEILING

    @pytest.mark.parametrize("label", sorted(MIX_REGIMES))
    def test_output_never_exceeds_ceiling(self, label):
        rng = np.random.default_rng(hash(label) % 2**32)
        ctx = AudioBuffer((0.8 * rng.standard_normal(48000)).astype(np.float32), 48000)
        stm = sine(440, 1.0, amplitude=0.95)
        out = mix(make_pair(ctx, stm), label)
        assert np.max(np.abs(out.samples)) <= LIMITER_CEILING
