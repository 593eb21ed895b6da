"""CLAP-style audio encoder with taps on its last feature layers.

A log-mel frontend feeds a small convolutional backbone; per-frame features
pass through two 512-wide feature layers, and a projection head pools over
time and emits a 128-dim unit-norm embedding. Layer selectors follow the
embedding sizes: 2 and 1 are the per-frame 512-wide feature layers (mean
pooled over time on extraction), 0 is the pooled 128-dim output.

Checkpoints are ordinary torch files created with ``init_checkpoint`` (or
trained elsewhere with the same architecture) and loaded from a local path.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

MODEL_SAMPLE_RATE = 48000
N_MELS = 64
N_FFT = 1024
HOP = 480  # 100 frames per second at 48 kHz
LAYER_DIMS = {0: 128, 1: 512, 2: 512}
ARCHS = ("CM", "CMS")

CHECKPOINT_FORMAT = "clap-bridge-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def _mel_filterbank(n_mels: int, n_fft: int, rate: int) -> torch.Tensor:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / rate)
    fb = np.zeros((n_mels, bins.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bins - lo) / max(mid - lo, 1e-12)
        falling = (hi - bins) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return torch.from_numpy(fb).float()


class AudioEncoder(nn.Module):
    def __init__(self):
        super().__init__()
        self.register_buffer("mel_fb", _mel_filterbank(N_MELS, N_FFT, MODEL_SAMPLE_RATE))
        self.register_buffer("window", torch.hann_window(N_FFT, periodic=True))
        self.backbone = nn.Sequential(
            nn.Conv2d(1, 32, 3, stride=(2, 2), padding=1),
            nn.GroupNorm(4, 32),
            nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=(2, 2), padding=1),
            nn.GroupNorm(8, 64),
            nn.ReLU(),
            nn.Conv2d(64, 128, 3, stride=(2, 2), padding=1),
            nn.GroupNorm(8, 128),
            nn.ReLU(),
        )
        # 64 mel bins shrink to 8 after three stride-2 stages
        self.feature2 = nn.Linear(128 * 8, 512)
        self.feature1 = nn.Linear(512, 512)
        self.projection = nn.Linear(512, 128)

    def _log_mel(self, wave: torch.Tensor) -> torch.Tensor:
        spec = torch.stft(
            wave, n_fft=N_FFT, hop_length=HOP, window=self.window,
            center=False, return_complex=True,
        )
        power = spec.real**2 + spec.imag**2  # (freq, frames)
        mel = self.mel_fb @ power
        return torch.log(torch.clamp(mel, min=1e-10))

    def forward(self, wave: torch.Tensor) -> dict[int, torch.Tensor]:
        """Per-layer activations for one mono waveform at the model rate.

        Returns {2: (T, 512), 1: (T, 512), 0: (128,)}.
        """
        log_mel = self._log_mel(wave)  # (mel, frames)
        grid = log_mel.T.unsqueeze(0).unsqueeze(0)  # (1, 1, frames, mel)
        maps = self.backbone(grid)  # (1, 128, frames', 8)
        frames = maps.permute(0, 2, 1, 3).flatten(2).squeeze(0)  # (frames', 1024)
        h2 = torch.relu(self.feature2(frames))
        h1 = torch.relu(self.feature1(h2))
        pooled = h1.mean(dim=0)
        out = self.projection(pooled)
        out = out / torch.clamp(out.norm(), min=1e-12)
        return {2: h2, 1: h1, 0: out}

    @torch.no_grad()
    def extract(self, wave: np.ndarray, layer: int) -> np.ndarray:
        """Embed one waveform, mean-pooling per-frame layers over time."""
        if layer not in LAYER_DIMS:
            raise ValueError(f"layer must be one of {sorted(LAYER_DIMS)}, got {layer}")
        n_min = N_FFT
        if wave.size < n_min:
            raise ValueError(f"need at least {n_min} samples, got {wave.size}")
        tensor = torch.from_numpy(np.ascontiguousarray(wave, dtype=np.float32))
        acts = self.forward(tensor)[layer]
        if acts.dim() == 2:
            acts = acts.mean(dim=0)
        return acts.cpu().numpy().astype(np.float32)


def init_checkpoint(path: str | Path, arch: str = "CM") -> Path:
    """Write a deterministic randomly-initialized checkpoint for the given arch."""
    if arch not in ARCHS:
        raise ValueError(f"arch must be one of {ARCHS}, got {arch!r}")
    seed = sum(arch.encode()) * 7919
    torch.manual_seed(seed)
    model = AudioEncoder()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": arch,
        "sample_rate": MODEL_SAMPLE_RATE,
        "state_dict": model.state_dict(),
    }, path)
    return path


def load_checkpoint(path: str | Path, device: str = "cpu") -> tuple[AudioEncoder, str]:
    """Load a checkpoint; returns (model in eval mode, arch tag)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a bridge checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    model = AudioEncoder()
    try:
        model.load_state_dict(payload["state_dict"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match the architecture: {exc}") from exc
    model.to(device)
    model.eval()
    return model, str(payload.get("arch", "CM"))
