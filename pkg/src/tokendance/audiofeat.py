"""35-dim music features: 20 MFCCs, onset envelope, 12 chroma, beat and peak flags.

Layout of each frame::

    0-19   MFCC (semantic part)
    20     onset envelope (half-wave rectified log-mel flux)
    21-32  chroma, pitch classes C..B
    33     beat one-hot
    34     peak one-hot
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

N_FFT = 1024
N_MELS = 64
N_MFCC = 20
N_FEATURES = 35
SEMANTIC = slice(0, 20)
ACOUSTIC = slice(20, 35)
ENVELOPE_DIM = 20
CHROMA_DIMS = slice(21, 33)
BEAT_DIM = 33
PEAK_DIM = 34

BEAT_WINDOW = 7
BEAT_STD_FACTOR = 0.5
PEAK_WINDOW = 1
_POWER_FLOOR = 1e-10
TOP_DB = 80.0


class AudioFeatureError(ValueError):
    pass


@dataclass
class AudioClip:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioFeatureError("sample rate must be positive")
        if self.samples.ndim != 1 or not np.all(np.isfinite(self.samples)):
            raise AudioFeatureError("audio must be finite mono samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MusicFeatureSequence:
    fps: float
    frames: np.ndarray  # (T, 35)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_FEATURES:
            raise AudioFeatureError(f"feature frames must be (T, {N_FEATURES}), got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sr: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters on the HTK mel scale, (n_mels, n_fft // 2 + 1)."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sr / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    # area normalisation so bands of different width carry comparable energy
    fb *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return fb


def chroma_map(sr: int, n_fft: int = N_FFT, fmin: float = 32.7) -> np.ndarray:
    """Fold FFT bins into 12 pitch classes by nearest equal-tempered pitch, (12, bins)."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
    cmap = np.zeros((12, freqs.size))
    valid = freqs >= fmin
    midi = np.round(69 + 12 * np.log2(freqs[valid] / 440.0)).astype(int)
    cmap[midi % 12, np.nonzero(valid)[0]] = 1.0
    return cmap


def stft_power(audio: AudioClip, fps: float, n_fft: int = N_FFT) -> np.ndarray:
    """Power spectrogram with frames centred at round(i * sr / fps), (T, n_fft//2+1)."""
    sr = audio.sample_rate
    n_frames = int(np.floor(audio.samples.size * fps / sr + 1e-9))
    centers = np.round(np.arange(n_frames) * sr / fps).astype(np.int64)
    padded = np.pad(audio.samples, (n_fft // 2, n_fft // 2))
    window = np.hanning(n_fft + 1)[:-1]
    idx = centers[:, None] + np.arange(n_fft)[None, :]
    spec = np.fft.rfft(padded[idx] * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2)


def _local_max(x: np.ndarray, radius: int) -> np.ndarray:
    """True where x[t] is the first maximum of its window [t - r, t + r]."""
    n = x.size
    out = np.zeros(n, dtype=bool)
    for t in range(n):
        lo, hi = max(0, t - radius), min(n, t + radius + 1)
        w = x[lo:hi]
        out[t] = lo + int(np.argmax(w)) == t
    return out


def pick_peaks(env: np.ndarray, radius: int = BEAT_WINDOW, std_factor: float = BEAT_STD_FACTOR) -> np.ndarray:
    """Indices that are local maxima within ``radius`` and above mean + k * std."""
    env = np.asarray(env, dtype=np.float64)
    if env.size == 0:
        return np.zeros(0, dtype=np.int64)
    thresh = env.mean() + std_factor * env.std()
    keep = _local_max(env, radius) & (env > thresh)
    return np.nonzero(keep)[0]


def extract_features(audio: AudioClip, fps: float = 30.0) -> MusicFeatureSequence:
    sr = audio.sample_rate
    if fps <= 0 or sr / fps < 2:
        raise AudioFeatureError(f"fps {fps} too high for sample rate {sr} (hop below 2 samples)")
    if audio.samples.size < N_FFT:
        raise AudioFeatureError(f"audio of {audio.samples.size} samples shorter than one {N_FFT}-sample window")
    power = stft_power(audio, fps)
    mel = power @ mel_filterbank(sr).T
    log_mel = 10.0 * np.log10(np.maximum(mel, _POWER_FLOOR))
    # dynamic range capped below the clip maximum, as in the usual dB conversion
    log_mel = np.maximum(log_mel, log_mel.max() - TOP_DB)
    mfcc = dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]

    flux = np.zeros(log_mel.shape[0])
    flux[1:] = np.maximum(0.0, np.diff(log_mel, axis=0)).mean(axis=1)

    chroma = np.sqrt(power) @ chroma_map(sr).T
    peak = chroma.max(axis=1, keepdims=True)
    chroma = np.where(peak > 0, chroma / np.where(peak > 0, peak, 1.0), 0.0)

    beats = np.zeros_like(flux)
    beats[pick_peaks(flux)] = 1.0
    peaks = np.zeros_like(flux)
    peaks[pick_peaks(flux, PEAK_WINDOW, 0.0)] = 1.0

    frames = np.concatenate([mfcc, flux[:, None], chroma, beats[:, None], peaks[:, None]], axis=1)
    return MusicFeatureSequence(fps, frames)


def decompose(features) -> tuple[np.ndarray, np.ndarray]:
    """(T, 35) -> (semantic (T, 20), acoustic (T, 15))."""
    x = features.frames if isinstance(features, MusicFeatureSequence) else np.asarray(features)
    if x.shape[-1] != N_FEATURES:
        raise AudioFeatureError(f"expected width {N_FEATURES}, got {x.shape[-1]}")
    return x[..., SEMANTIC].copy(), x[..., ACOUSTIC].copy()


def recompose(semantic: np.ndarray, acoustic: np.ndarray) -> np.ndarray:
    return np.concatenate([semantic, acoustic], axis=-1)


def detect_beats(features) -> np.ndarray:
    x = features.frames if isinstance(features, MusicFeatureSequence) else np.asarray(features)
    return np.nonzero(x[:, BEAT_DIM] >= 0.5)[0].astype(np.int64)


# ---------------------------------------------------------------------------
# files


def read_wav(path: str | Path) -> AudioClip:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise AudioFeatureError(f"{path}: expected 16-bit mono PCM")
        sr = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(sr, samples)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(pcm.tobytes())


FEATURE_MAGIC = b"TDFT"


def write_feature_cache(path: str | Path, feats: MusicFeatureSequence) -> None:
    header = FEATURE_MAGIC + struct.pack("<II", int(round(feats.fps)), len(feats))
    Path(path).write_bytes(header + feats.frames.astype("<f4").tobytes())


def read_feature_cache(path: str | Path) -> MusicFeatureSequence:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise AudioFeatureError(f"{path}: not a TDFT feature cache")
    fps, t = struct.unpack_from("<II", buf, 4)
    frames = np.frombuffer(buf, dtype="<f4", count=t * N_FEATURES, offset=12).reshape(t, N_FEATURES)
    return MusicFeatureSequence(float(fps), frames.astype(np.float32))
