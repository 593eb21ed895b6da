import numpy as np
import pytest

from apa_metrics.audio import AudioBuffer, Window, WindowPair
from apa_metrics.synth import generate_corpus


def sine(freq_hz: float, duration_s: float = 1.0, rate: int = 48000,
         amplitude: float = 1.0) -> AudioBuffer:
    t = np.arange(int(round(duration_s * rate))) / rate
    return AudioBuffer((amplitude * np.sin(2 * np.pi * freq_hz * t)).astype(np.float32), rate)


def make_window(buf: AudioBuffer, song_id: str = "song") -> Window:
    return Window(
        buffer=buf,
        source_song_id=song_id,
        source_offset_s=0.0,
        duration_s=len(buf) / buf.sample_rate,
    )


def make_pair(context: AudioBuffer, stem: AudioBuffer, song_id: str = "song",
              matched: bool = True) -> WindowPair:
    return WindowPair(
        context=make_window(context, song_id),
        stem=make_window(stem, song_id),
        matched=matched,
    )


def fft_peak_hz(samples: np.ndarray, rate: int) -> float:
    """Independent oracle: frequency of the strongest FFT bin."""
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=np.float64)))
    return float(np.argmax(spectrum) * rate / len(samples))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six 12-second songs; enough for pipeline tests at low window counts."""
    root = tmp_path_factory.mktemp("corpus-small")
    manifest = generate_corpus(root, n_songs=6, duration_s=12.0, seed=0)
    return manifest


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory):
    """Ten 30-second songs, as bundled for the validation harness."""
    root = tmp_path_factory.mktemp("corpus-acceptance")
    manifest = generate_corpus(root, n_songs=10, duration_s=30.0, seed=0)
    return manifest
