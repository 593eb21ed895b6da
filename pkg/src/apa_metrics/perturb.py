"""Synthetic stem transformations used to build candidate sets for validation.

Eight transformation labels drive the validation harness. The upper group
should leave adherence intact, the lower group should degrade it:

    TRUE   identity                                    invariant
    EXT    external command (e.g. a neural codec)      invariant
    NOISE  add white noise at stem loudness - 20 dB    invariant
    TS     circular time shift by 0.2 to 3.0 s         non-invariant
    PS     pitch shift by +/- 1 to 7 semitones         non-invariant
    TPS    pitch shift then time shift                 non-invariant
    SUBS   substitute stems across songs               non-invariant

All randomized transforms are fully determined by (input, parameters, seed),
and every transform preserves window length and sample rate and leaves the
context side untouched.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from .audio import Window, WindowPair, decode_wav, encode_wav, resample_by_ratio
from .dynamics import integrated_loudness
from .errors import (
    CommandFailed,
    CorruptFile,
    InfeasibleDerangement,
    LengthMismatch,
    OutOfRange,
    SilentAudio,
    TooFewPairs,
    UnsupportedFormat,
)

TIME_SHIFT_RANGE_S = (0.2, 3.0)
SEMITONE_RANGE = (1, 7)
NOISE_OFFSET_DB = -20.0

INVARIANT_LABELS = ("TRUE", "ENC", "DAC", "NOISE", "EXT")
NONINVARIANT_LABELS = ("TS", "PS", "TPS", "SUBS")
TRANSFORM_LABELS = ("TRUE", "NOISE", "TS", "PS", "TPS", "SUBS", "EXT")


@dataclass(frozen=True)
class Transform:
    """A stem transformation with its parameters and invariance class."""

    label: str
    invariant: bool
    shift_range_s: tuple[float, float] = TIME_SHIFT_RANGE_S
    semitone_range: tuple[int, int] = SEMITONE_RANGE
    noise_offset_db: float = NOISE_OFFSET_DB
    command: str | None = None  # EXT only

    @classmethod
    def from_label(cls, label: str, command: str | None = None) -> "Transform":
        label = label.upper()
        if label not in TRANSFORM_LABELS:
            raise ValueError(
                f"unknown transform {label!r}; expected one of {TRANSFORM_LABELS}"
            )
        if label == "EXT" and not command:
            raise ValueError("EXT transform needs an external command")
        return cls(label=label, invariant=label in INVARIANT_LABELS, command=command)


def time_shift(
    stem: Window,
    shift_s: float,
    range_s: tuple[float, float] | None = None,
) -> Window:
    """Rotate the stem circularly by shift_s seconds (either direction).

    When range_s is given, |shift_s| must fall inside it.
    """
    if range_s is not None and not (range_s[0] <= abs(shift_s) <= range_s[1]):
        raise OutOfRange(
            f"|shift| = {abs(shift_s):.3g}s outside configured range {range_s}"
        )
    rate = stem.buffer.sample_rate
    k = int(round(shift_s * rate))
    return stem.with_samples(np.roll(stem.buffer.samples, k))


def pitch_shift(stem: Window, semitones: int, enforce_range: bool = True) -> Window:
    """Scale perceived pitch by 2^(semitones/12) while keeping the duration.

    Resamples by the inverse ratio and circularly loops/trims back to the
    original length. With enforce_range, |semitones| must lie in [1, 7];
    disable it for test signals (0 or +/-12 and beyond).
    """
    if enforce_range and not (SEMITONE_RANGE[0] <= abs(semitones) <= SEMITONE_RANGE[1]):
        raise OutOfRange(
            f"|semitones| = {abs(semitones)} outside range {SEMITONE_RANGE}"
        )
    if semitones == 0:
        return stem.with_samples(stem.buffer.samples.copy())
    ratio = 2.0 ** (semitones / 12.0)
    shifted = resample_by_ratio(stem.buffer.samples, ratio)
    n = len(stem.buffer)
    if shifted.size == 0:
        raise OutOfRange("pitch ratio collapsed the stem to zero samples")
    reps = int(np.ceil(n / shifted.size))
    looped = np.tile(shifted, reps)[:n]
    return stem.with_samples(looped.astype(np.float32))


def time_pitch_shift(
    stem: Window,
    shift_s: float,
    semitones: int,
    shift_range_s: tuple[float, float] | None = None,
    enforce_range: bool = True,
) -> Window:
    """Pitch shift followed by a circular time shift."""
    return time_shift(
        pitch_shift(stem, semitones, enforce_range=enforce_range),
        shift_s,
        range_s=shift_range_s,
    )


def add_noise(stem: Window, rng_seed: int, offset_db: float = NOISE_OFFSET_DB) -> Window:
    """Add white Gaussian noise metering offset_db below the stem's loudness.

    The noise component alone is level-matched (stem loudness + offset_db,
    i.e. 20 LU below by default). Seeded and deterministic.
    """
    buf = stem.buffer
    if not np.any(buf.samples):
        raise SilentAudio("cannot meter a digitally silent stem")
    stem_reading = integrated_loudness(buf, gate_fallback=True)

    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(len(buf))
    noise_buf = type(buf)(noise.astype(np.float32), buf.sample_rate)
    noise_reading = integrated_loudness(noise_buf)
    gain = 10.0 ** ((stem_reading.lufs + offset_db - noise_reading.lufs) / 20.0)
    out = buf.samples.astype(np.float64) + noise * gain
    return stem.with_samples(out.astype(np.float32))


# --- stem substitution ----------------------------------------------------------------


def mismatch_permutation(
    context_song_ids: list[str],
    stem_song_ids: list[str],
    rng: np.random.Generator,
    max_restarts: int = 20,
) -> np.ndarray:
    """Seeded permutation with no fixed points and no same-song assignment.

    Position i receives the stem from position perm[i]; the constraint is
    context_song_ids[i] != stem_song_ids[perm[i]] and perm[i] != i.
    """
    n = len(context_song_ids)
    if n != len(stem_song_ids):
        raise ValueError("context and stem id lists must have equal length")
    if n < 2:
        raise TooFewPairs(f"stem substitution needs at least 2 pairs, got {n}")

    ctx = np.asarray(context_song_ids, dtype=object)
    stems = np.asarray(stem_song_ids, dtype=object)
    # a song whose stems outnumber the foreign contexts can never be placed
    for song in set(context_song_ids) | set(stem_song_ids):
        if np.sum(stems == song) + np.sum(ctx == song) > n:
            raise InfeasibleDerangement(
                f"song {song!r} owns too many pairs; no cross-song permutation exists"
            )

    idx = np.arange(n)
    for _ in range(max_restarts):
        perm = rng.permutation(n)
        for _ in range(20 * n + 10):
            bad = np.flatnonzero((ctx == stems[perm]) | (perm == idx))
            if bad.size == 0:
                return perm
            i = int(bad[0])
            # swap with a j that fixes i without creating a violation at j
            ok = (
                (ctx != ctx[i])  # different song, guarantees j != i
                & (stems[perm] != ctx[i])  # i can accept j's stem
                & (ctx != stems[perm[i]])  # j can accept i's stem
                & (idx != perm[i])  # no new fixed point at j
                & (perm != i)  # no new fixed point at i
            )
            candidates = np.flatnonzero(ok)
            if candidates.size == 0:
                break  # restart from a fresh shuffle
            j = int(rng.choice(candidates))
            perm[i], perm[j] = perm[j], perm[i]
    raise InfeasibleDerangement(
        "could not find a cross-song stem permutation for these pairs"
    )


def substitute_stems(pairs: list[WindowPair], rng_seed: int) -> list[WindowPair]:
    """Permute stems across pairs so no stem meets a context from its own song."""
    rng = np.random.default_rng(rng_seed)
    perm = mismatch_permutation(
        [p.context.source_song_id for p in pairs],
        [p.stem.source_song_id for p in pairs],
        rng,
    )
    return [
        WindowPair(context=pairs[i].context, stem=pairs[int(j)].stem, matched=False)
        for i, j in enumerate(perm)
    ]


# --- external command hook ----------------------------------------------------------


def external_transform(stem: Window, command: str | list[str]) -> Window:
    """Pipe the stem as WAV through an external command (WAV in, WAV out).

    The command must exit 0 and emit audio of identical length and rate.
    """
    args = shlex.split(command) if isinstance(command, str) else list(command)
    wav_in = encode_wav(stem.buffer, bit_depth="float32")
    try:
        proc = subprocess.run(args, input=wav_in, capture_output=True)
    except OSError as exc:
        raise CommandFailed(f"failed to run {args!r}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace").strip()[-500:]
        raise CommandFailed(f"{args!r} exited {proc.returncode}: {tail}")
    try:
        out = decode_wav(proc.stdout)
    except (UnsupportedFormat, CorruptFile) as exc:
        raise CommandFailed(f"{args!r} emitted invalid WAV output: {exc}") from exc
    if len(out) != len(stem.buffer) or out.sample_rate != stem.buffer.sample_rate:
        raise LengthMismatch(
            f"external transform returned {len(out)} samples @ {out.sample_rate} Hz, "
            f"expected {len(stem.buffer)} @ {stem.buffer.sample_rate} Hz"
        )
    return stem.with_samples(out.samples)
