"""Level measurement, normalization, limiting, and the context/stem mix regimes.

Integrated loudness follows ITU-R BS.1770-4: K-weighting (high-shelf plus
high-pass biquads), 400 ms blocks at 75% overlap, a -70 LUFS absolute gate,
and a relative gate 10 LU below the ungated mean. Peak levels are plain
sample peaks in dBFS.

Seven mix regimes set the relative level of context and stem before summing:

    PP  peak      preserve relative levels; normalize mix to original peak
    P0  peak      context -3 dBFS, stem -3 dBFS
    P1  peak      context -3 dBFS, stem -6 dBFS
    P2  peak      context -3 dBFS, stem -9 dBFS
    L0  loudness  context -20 LUFS, stem -20 LUFS
    L1  loudness  context -20 LUFS, stem -23 LUFS
    L2  loudness  context -20 LUFS, stem -26 LUFS

Every mixed output passes through a look-ahead limiter with ceiling 0.999.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import tan, pi

import numpy as np
from scipy import signal
from scipy.ndimage import minimum_filter1d, uniform_filter1d

from .audio import AudioBuffer, WindowPair
from .errors import GateFallbackWarning, SilentAudio, SilentPart, TooShort


@dataclass(frozen=True)
class MixRegime:
    """One row of the mix-regime table."""

    label: str
    kind: str  # "peak" | "loudness"
    context_target: float | None  # dBFS for peak regimes, LUFS for loudness regimes
    stem_target: float | None
    preserve_relative: bool = False


MIX_REGIMES: dict[str, MixRegime] = {
    "PP": MixRegime("PP", "peak", None, None, preserve_relative=True),
    "P0": MixRegime("P0", "peak", -3.0, -3.0),
    "P1": MixRegime("P1", "peak", -3.0, -6.0),
    "P2": MixRegime("P2", "peak", -3.0, -9.0),
    "L0": MixRegime("L0", "loudness", -20.0, -20.0),
    "L1": MixRegime("L1", "loudness", -20.0, -23.0),
    "L2": MixRegime("L2", "loudness", -20.0, -26.0),
}

REGIME_LABELS = tuple(MIX_REGIMES)


@dataclass(frozen=True)
class LoudnessReading:
    """Integrated loudness plus how many 400 ms blocks survived gating.

    gated_blocks == 0 marks an ungated fallback reading (see
    integrated_loudness(gate_fallback=True)); a normal reading has >= 1.
    """

    lufs: float
    gated_blocks: int


# --- peak ------------------------------------------------------------------------


def peak_of(samples: np.ndarray) -> float:
    """Sample peak in dBFS: 20*log10(max |x|)."""
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("peak_of requires a non-empty sample sequence")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        raise SilentAudio("all-zero input has no peak level")
    return 20.0 * np.log10(peak)


def peak_normalize(samples: np.ndarray, target_db: float) -> np.ndarray:
    """Scale so the sample peak sits at target_db dBFS."""
    gain = 10.0 ** ((target_db - peak_of(samples)) / 20.0)
    return (np.asarray(samples, dtype=np.float64) * gain).astype(np.float32)


# --- BS.1770 integrated loudness ---------------------------------------------------

_BLOCK_S = 0.400
_STEP_S = 0.100
_ABS_GATE_LUFS = -70.0
_OFFSET_LU = -0.691


@lru_cache(maxsize=16)
def _k_weighting_sos(fs: int) -> np.ndarray:
    """K-weighting biquads for an arbitrary rate, from the analog prototypes.

    At 48 kHz these reproduce the coefficient table of the standard to ~1e-6.
    """
    # stage 1: spectral-shaping high shelf
    f0, gain_db, q = 1681.974450955533, 3.999843853973347, 0.7071752369554196
    k = tan(pi * f0 / fs)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh ** 0.4996667741545416
    a0 = 1.0 + k / q + k * k
    shelf_b = np.array([vh + vb * k / q + k * k, 2.0 * (k * k - vh), vh - vb * k / q + k * k]) / a0
    shelf_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])

    # stage 2: RLB high pass (b coefficients fixed by the standard)
    f0, q = 38.13547087602444, 0.5003270373238773
    k = tan(pi * f0 / fs)
    a0 = 1.0 + k / q + k * k
    hp_b = np.array([1.0, -2.0, 1.0])
    hp_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])

    return np.vstack([
        np.concatenate([shelf_b, shelf_a]),
        np.concatenate([hp_b, hp_a]),
    ])


def _block_powers(buf: AudioBuffer) -> np.ndarray:
    """Mean-square power of K-weighted 400 ms blocks stepped every 100 ms."""
    fs = buf.sample_rate
    block = int(round(_BLOCK_S * fs))
    step = int(round(_STEP_S * fs))
    if len(buf) < block:
        raise TooShort(
            f"integrated loudness needs at least {_BLOCK_S * 1000:.0f} ms, "
            f"got {buf.duration_s * 1000:.1f} ms"
        )
    y = signal.sosfilt(_k_weighting_sos(fs), buf.samples.astype(np.float64))
    sq = np.concatenate([[0.0], np.cumsum(y * y)])
    n_blocks = 1 + (len(buf) - block) // step
    starts = np.arange(n_blocks) * step
    return (sq[starts + block] - sq[starts]) / block


def integrated_loudness(buf: AudioBuffer, gate_fallback: bool = False) -> LoudnessReading:
    """Gated integrated loudness in LUFS.

    With gate_fallback=True, a non-silent signal whose blocks all fall below
    the absolute gate yields an ungated mean-square reading (gated_blocks=0)
    and a GateFallbackWarning instead of SilentAudio. Digital silence always
    raises SilentAudio.
    """
    powers = _block_powers(buf)
    with np.errstate(divide="ignore"):
        levels = _OFFSET_LU + 10.0 * np.log10(powers)

    abs_mask = levels > _ABS_GATE_LUFS
    if not abs_mask.any():
        if gate_fallback and powers.sum() > 0.0:
            lufs = _OFFSET_LU + 10.0 * np.log10(powers.mean())
            warnings.warn(
                f"no block above the {_ABS_GATE_LUFS} LUFS gate; "
                f"using ungated reading {lufs:.2f} LUFS",
                GateFallbackWarning,
                stacklevel=2,
            )
            return LoudnessReading(float(lufs), 0)
        raise SilentAudio("no 400 ms block above the absolute loudness gate")

    rel_threshold = _OFFSET_LU + 10.0 * np.log10(powers[abs_mask].mean()) - 10.0
    gated = abs_mask & (levels > rel_threshold)
    if not gated.any():  # cannot happen (the loudest block passes), but stay safe
        gated = abs_mask
    lufs = _OFFSET_LU + 10.0 * np.log10(powers[gated].mean())
    return LoudnessReading(float(lufs), int(gated.sum()))


def loudness_normalize(
    buf: AudioBuffer, target_lufs: float, gate_fallback: bool = False
) -> AudioBuffer:
    """Scale the buffer so its integrated loudness sits at target_lufs."""
    reading = integrated_loudness(buf, gate_fallback=gate_fallback)
    gain = 10.0 ** ((target_lufs - reading.lufs) / 20.0)
    return AudioBuffer((buf.samples.astype(np.float64) * gain).astype(np.float32),
                       buf.sample_rate)


# --- look-ahead limiter -------------------------------------------------------------

LIMITER_CEILING = 0.999
_LOOKAHEAD_S = 0.005
_RELEASE_S = 0.050

# largest float32 that does not exceed the ceiling (float32(0.999) rounds up)
_CEILING_F32 = np.float32(LIMITER_CEILING)
if float(_CEILING_F32) > LIMITER_CEILING:
    _CEILING_F32 = np.nextafter(_CEILING_F32, np.float32(0.0))


def _release_envelope(deficit: np.ndarray, coef: float) -> np.ndarray:
    """h[n] = max(deficit[n], coef * h[n-1]) without a Python-level sample loop.

    Computed per chunk in log space: within a chunk,
    h[n] = max_k<=n deficit[k] * coef^(n-k) becomes a running maximum after
    dividing out coef^n. Chunking keeps the exponents small.
    """
    n = deficit.size
    out = np.empty(n)
    log_coef = np.log(coef)
    carry = 0.0
    chunk = 8192
    with np.errstate(divide="ignore"):
        for start in range(0, n, chunk):
            d = deficit[start:start + chunk]
            m = d.size
            idx = np.arange(1, m + 1, dtype=np.float64)
            scaled = np.log(np.maximum(d, 1e-300)) - idx * log_coef
            running = np.maximum.accumulate(scaled)
            h = np.exp(running + idx * log_coef)
            if carry > 0.0:
                h = np.maximum(h, carry * np.exp(idx * log_coef))
            out[start:start + m] = h
            carry = out[start + m - 1]
    return np.minimum(out, 1.0)


def limit(samples: np.ndarray, sample_rate: int = 48000) -> np.ndarray:
    """Transparent look-ahead peak limiter with ceiling 0.999.

    5 ms look-ahead, 50 ms exponential release, linear attack ramps from a
    moving-average smoother; the gain curve is continuous, and the output
    never exceeds the ceiling. Input entirely below the ceiling is returned
    bit-identical.
    """
    x = np.asarray(samples, dtype=np.float32)
    if x.size == 0:
        return x.copy()
    if float(np.max(np.abs(x))) <= LIMITER_CEILING:
        return x.copy()

    look = max(1, int(round(_LOOKAHEAD_S * sample_rate)))
    x64 = x.astype(np.float64)
    needed = LIMITER_CEILING / np.maximum(np.abs(x64), LIMITER_CEILING)

    # gain needed over the next `look` samples: window [n, n+look-1]
    ahead_min = minimum_filter1d(needed, size=look, origin=-(look // 2), mode="nearest")
    # exponential release toward unity
    coef = float(np.exp(-1.0 / (_RELEASE_S * sample_rate)))
    gain = 1.0 - _release_envelope(1.0 - ahead_min, coef)
    # smooth attack: causal moving average over window [n-look+1, n]
    gain = uniform_filter1d(gain, size=look, origin=(look - 1) - look // 2, mode="nearest")

    out = (x64 * gain).astype(np.float32)
    # float32 rounding can cross the ceiling by one ulp; clamp after the cast
    np.clip(out, -_CEILING_F32, _CEILING_F32, out=out)
    return out


# --- mixing ----------------------------------------------------------------------


def _normalized_part(samples: np.ndarray, rate: int, regime: MixRegime,
                     target: float, side: str) -> np.ndarray:
    if not np.any(samples):
        raise SilentPart(side)
    if regime.kind == "peak":
        return peak_normalize(samples, target)
    try:
        buf = loudness_normalize(AudioBuffer(samples, rate), target, gate_fallback=True)
    except SilentAudio as exc:
        raise SilentPart(side, str(exc)) from exc
    return buf.samples


def mix_parts(pair: WindowPair, regime: MixRegime | str) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-part signals ready to sum, plus the gain applied to the sum.

    For the target regimes (P0-P2, L0-L2) the parts come back individually
    normalized and the sum gain is 1. For PP the parts are untouched and the
    sum gain renormalizes the mix to the louder part's original peak.
    """
    if isinstance(regime, str):
        regime = MIX_REGIMES[regime]
    rate = pair.context.buffer.sample_rate
    c = pair.context.buffer.samples
    s = pair.stem.buffer.samples

    if regime.preserve_relative:
        orig_peak = max(float(np.max(np.abs(c))), float(np.max(np.abs(s))))
        if orig_peak == 0.0:
            raise SilentPart("mix")
        mix_peak = float(np.max(np.abs(c.astype(np.float64) + s.astype(np.float64))))
        if mix_peak == 0.0:
            raise SilentPart("mix")
        return c, s, orig_peak / mix_peak

    c_norm = _normalized_part(c, rate, regime, regime.context_target, "context")
    s_norm = _normalized_part(s, rate, regime, regime.stem_target, "stem")
    return c_norm, s_norm, 1.0


def mix(pair: WindowPair, regime: MixRegime | str) -> AudioBuffer:
    """Mix a window pair under a regime and limit the result.

    Deterministic; the output never contains a sample outside +/-0.999.
    """
    if isinstance(regime, str):
        regime = MIX_REGIMES[regime]
    rate = pair.context.buffer.sample_rate
    c, s, post_gain = mix_parts(pair, regime)
    summed = (c.astype(np.float64) + s.astype(np.float64)) * post_gain
    return AudioBuffer(limit(summed.astype(np.float32), rate), rate)
