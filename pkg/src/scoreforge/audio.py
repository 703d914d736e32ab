"""Waveform container and RIFF/WAVE I/O.

Files are written as 32-bit float PCM. Reading accepts float32/float64 and
16/24/32-bit integer PCM (scipy surfaces 24-bit as int32), converted to
float64 in [-1, 1). Multichannel input is averaged to mono.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class AudioError(Exception):
    pass


@dataclass
class Waveform:
    samples: np.ndarray  # float64, mono
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive: {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


_INT_SCALES = {np.dtype(np.int16): 2 ** 15, np.dtype(np.int32): 2 ** 31}


def read_wav(path: str | Path) -> Waveform:
    sample_rate, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype in _INT_SCALES:
        samples = data.astype(np.float64) / _INT_SCALES[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, int(sample_rate))


def write_wav(path: str | Path, waveform: Waveform) -> None:
    wavfile.write(path, waveform.sample_rate,
                  waveform.samples.astype(np.float32))
