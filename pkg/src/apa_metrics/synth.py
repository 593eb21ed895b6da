"""Synthetic multitrack corpus so the full pipeline runs with zero external data.

Each generated song gets its own key (root spread around the circle of
fifths across octaves), tempo, and chord progression. The context is a
sustained sine-chord pad plus a bass line (two separate files, summed by the
manifest loader); the stem is either an arpeggiated lead on chord tones one
octave up or, for every fourth song, a percussive click track with a
song-specific click pitch. Matched pairs therefore share key and tempo,
while cross-song substitutions clash in both.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, save_audio

_MAJOR_TRIAD = (0, 4, 7)
_PROGRESSION = (0, 5, 7, 9)  # I IV V vi roots, in semitones


def _tone(n: int, fs: int, freq: float, phase: float) -> np.ndarray:
    t = np.arange(n) / fs
    return np.sin(2 * np.pi * freq * t + phase)


def _envelope(n: int, fs: int, attack_s: float = 0.05, release_s: float = 0.1) -> np.ndarray:
    env = np.ones(n)
    a = min(int(attack_s * fs), n)
    r = min(int(release_s * fs), n - a)
    if a:
        env[:a] = np.linspace(0.0, 1.0, a, endpoint=False)
    if r:
        env[n - r:] = np.linspace(1.0, 0.0, r)
    return env


def _normalize_peak(x: np.ndarray, peak: float = 0.6) -> np.ndarray:
    top = np.max(np.abs(x))
    return x * (peak / top) if top > 0 else x


def _song_params(index: int):
    semis = (index * 7) % 12
    octave = index % 3
    root_hz = 110.0 * (2.0 ** octave) * (2.0 ** (semis / 12.0))
    tempo_bpm = 84.0 + 6.0 * index
    return root_hz, tempo_bpm


def _render_song(index: int, duration_s: float, fs: int, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
    root_hz, tempo = _song_params(index)
    n = int(round(duration_s * fs))
    beat_s = 60.0 / tempo
    bar_s = 4.0 * beat_s

    pad = np.zeros(n)
    bass = np.zeros(n)
    n_bars = int(np.ceil(duration_s / bar_s))
    for bar in range(n_bars):
        start = int(round(bar * bar_s * fs))
        stop = min(int(round((bar + 1) * bar_s * fs)), n)
        if stop <= start:
            break
        seg = stop - start
        degree = _PROGRESSION[bar % len(_PROGRESSION)]
        chord_root = root_hz * 2.0 ** (degree / 12.0)
        env = _envelope(seg, fs)
        for interval in _MAJOR_TRIAD:
            freq = chord_root * 2.0 ** (interval / 12.0)
            pad[start:stop] += 0.14 * _tone(seg, fs, freq, rng.uniform(0, 2 * np.pi)) * env
        # bass: one octave down, struck on every beat
        beats_in_bar = int(np.ceil(seg / (beat_s * fs)))
        for b in range(beats_in_bar):
            bs = start + int(round(b * beat_s * fs))
            be = min(bs + int(round(beat_s * fs)), stop)
            if be <= bs:
                break
            decay = np.exp(-np.arange(be - bs) / (0.35 * beat_s * fs))
            bass[bs:be] += 0.3 * _tone(be - bs, fs, chord_root / 2.0, 0.0) * decay

    # gentle broadband floor, as real recordings have; without it the log-mel
    # floor makes any added noise look like a catastrophic change
    pad += 10.0 ** (-42.0 / 20.0) * rng.standard_normal(n)
    percussive = index % 4 == 3
    stem = 10.0 ** (-45.0 / 20.0) * rng.standard_normal(n)
    if percussive:
        click_hz = 1400.0 + 180.0 * index
        step = beat_s
        k = 0
        while k * step < duration_s:
            cs = int(round(k * step * fs))
            ce = min(cs + int(round(0.06 * fs)), n)
            if ce > cs:
                amp = 0.5 if k % 2 == 0 else 0.25
                decay = np.exp(-np.arange(ce - cs) / (0.02 * fs))
                stem[cs:ce] += amp * _tone(ce - cs, fs, click_hz, 0.0) * decay
            k += 1
    else:
        half = beat_s / 2.0
        k = 0
        while k * half < duration_s:
            bar = int(k * half / bar_s)
            degree = _PROGRESSION[bar % len(_PROGRESSION)]
            interval = _MAJOR_TRIAD[int(rng.integers(len(_MAJOR_TRIAD)))]
            freq = root_hz * 2.0 ** ((degree + interval) / 12.0 + 1.0)  # octave up
            cs = int(round(k * half * fs))
            ce = min(cs + int(round(half * fs)), n)
            if ce > cs:
                decay = np.exp(-np.arange(ce - cs) / (0.6 * half * fs))
                stem[cs:ce] += 0.35 * _tone(ce - cs, fs, freq, rng.uniform(0, 2 * np.pi)) * decay
            k += 1

    return (
        _normalize_peak(pad).astype(np.float32),
        _normalize_peak(bass, 0.45).astype(np.float32),
        _normalize_peak(stem).astype(np.float32),
    )


def generate_corpus(
    out_dir: str | Path,
    n_songs: int = 10,
    duration_s: float = 30.0,
    sample_rate: int = 48000,
    seed: int = 0,
) -> Path:
    """Write a synthetic corpus plus its manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    songs = []
    for i in range(n_songs):
        pad, bass, stem = _render_song(i, duration_s, sample_rate, seed)
        song_id = f"song-{i:02d}"
        song_dir = out_dir / "songs" / song_id
        song_dir.mkdir(parents=True, exist_ok=True)
        save_audio(AudioBuffer(pad, sample_rate), song_dir / "pad.wav", bit_depth="pcm16")
        save_audio(AudioBuffer(bass, sample_rate), song_dir / "bass.wav", bit_depth="pcm16")
        save_audio(AudioBuffer(stem, sample_rate), song_dir / "stem.wav", bit_depth="pcm16")
        songs.append({
            "id": song_id,
            "context": [f"songs/{song_id}/pad.wav", f"songs/{song_id}/bass.wav"],
            "stem": f"songs/{song_id}/stem.wav",
        })

    manifest = {"version": 1, "sample_rate": sample_rate, "songs": songs}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path
