"""Log-mel power spectrograms of trailer audio, and the audio classifier head."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .encoders import FeatureSequence, SequenceClassifier

log = logging.getLogger(__name__)

TARGET_SR = 12_000
CLIP_SECONDS = 30
N_CLIPS = 4
N_MELS = 128
HOP = 256
N_FFT = 2048
POWER_FLOOR = 1e-10


class AudioTooShortError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("audio must be mono")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite audio samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> AudioClip:
    """16/32-bit PCM or float WAV, multichannel averaged to mono, in [-1, 1]."""
    from scipy.io import wavfile

    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(x, int(sr))


def write_wav(path, clip: AudioClip, dtype="int16"):
    from scipy.io import wavfile

    x = np.clip(clip.samples, -1.0, 1.0)
    if dtype == "int16":
        data = np.round(x * 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, clip.sample_rate, data)


def resample(audio: AudioClip, target=TARGET_SR) -> AudioClip:
    """Linear-interpolation resampling to ``target`` Hz."""
    src = audio.sample_rate
    if src == target:
        return AudioClip(audio.samples.copy(), target)
    n = audio.samples.size
    n_out = int(round(n * target / src))
    t = np.arange(n_out) * (src / target)
    return AudioClip(np.interp(t, np.arange(n), audio.samples), target)


def select_clips(audio: AudioClip, rng_seed=0, n_clips=N_CLIPS, seconds=CLIP_SECONDS):
    """Leading contiguous 30 s clips, topped up with clips at random offsets
    when the audio is shorter than ``n_clips * seconds``."""
    if audio.duration < 1.0:
        raise AudioTooShortError(f"audio lasts {audio.duration:.3f}s, need at least 1s")
    L = seconds * audio.sample_rate
    x = audio.samples
    if x.size < L:
        x = np.resize(x, L)  # cyclic tiling
    n_lead = min(n_clips, x.size // L)
    offsets = [k * L for k in range(n_lead)]
    if n_lead < n_clips:
        rng = np.random.default_rng(rng_seed)
        offsets += [int(o) for o in rng.integers(0, x.size - L + 1, size=n_clips - n_lead)]
    return [AudioClip(x[o:o + L], audio.sample_rate) for o in offsets]


# ---------------------------------------------------------------------------
# spectral analysis


@lru_cache(maxsize=8)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis (power-of-two length)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length {n} is not a power of two")
    lead = x.shape[:-1]
    x = x[..., _bit_reverse(n)]
    m = 1
    while m < n:
        w = np.exp(-2j * np.pi * np.arange(m) / (2 * m))
        x = x.reshape(*lead, n // (2 * m), 2, m)
        even = x[..., 0, :]
        odd = x[..., 1, :] * w
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    return x


def rfft(x) -> np.ndarray:
    """Non-negative-frequency half of the FFT of real input (n//2 + 1 bins).

    Even and odd samples are packed into one complex sequence of half the
    length, transformed with ``fft`` and then separated.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        return fft(x)[..., : n // 2 + 1]
    h = n // 2
    Z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    Zr = np.conj(Z[..., (-np.arange(h + 1)) % h])  # conj(Z[h - k]), k = 0..h
    Zk = Z[..., np.arange(h + 1) % h]
    even = 0.5 * (Zk + Zr)
    odd = -0.5j * (Zk - Zr)
    return even + np.exp(-2j * np.pi * np.arange(h + 1) / n) * odd


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sr=TARGET_SR, n_fft=N_FFT, n_mels=N_MELS, fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters (peak 1) on the HTK mel scale; shape (n_mels, n_fft//2 + 1)."""
    fmax = sr / 2 if fmax is None else fmax
    centers = mel_filter_centers(sr, n_mels, fmin, fmax, edges=True)
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = centers[:-2, None], centers[1:-1, None], centers[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.flags.writeable = False
    return fb


def mel_filter_centers(sr=TARGET_SR, n_mels=N_MELS, fmin=0.0, fmax=None, edges=False):
    fmax = sr / 2 if fmax is None else fmax
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return pts if edges else pts[1:-1]


def frame_count(n_samples: int, hop=HOP) -> int:
    return n_samples // hop + 1


def power_spectrogram(x, n_fft=N_FFT, hop=HOP) -> np.ndarray:
    """|STFT|^2 with centred, reflect-padded Hann frames; (n_fft//2+1, T)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise ValueError("empty signal")
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect") if x.size > 1 else np.full(x.size + 2 * pad, x[0])
    T = frame_count(x.size, hop)
    idx = hop * np.arange(T)[:, None] + np.arange(n_fft)[None, :]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    spec = rfft(xp[idx] * window)
    return (spec.real ** 2 + spec.imag ** 2).T


def log_mel_spectrogram(clip, n_mels=N_MELS, hop=HOP, n_fft=N_FFT, sr=None) -> np.ndarray:
    """dB-scaled mel power spectrogram, shape (n_mels, n_samples // hop + 1)."""
    if isinstance(clip, AudioClip):
        sr, x = clip.sample_rate, clip.samples
    else:
        sr, x = (TARGET_SR if sr is None else sr), np.asarray(clip, dtype=np.float64)
    S = power_spectrogram(x, n_fft, hop)
    mel = mel_filterbank(sr, n_fft, n_mels) @ S
    return 10.0 * np.log10(np.maximum(mel, POWER_FLOOR))


def trailer_spectrogram(audio: AudioClip, rng_seed=0) -> np.ndarray:
    """Four 30 s clips at 12 kHz -> array (4, 128, 1407)."""
    clips = select_clips(audio, rng_seed)
    return np.stack([log_mel_spectrogram(resample(c, TARGET_SR)) for c in clips])


# ---------------------------------------------------------------------------
# classifier head


def spectrogram_sequences(spec, per_clip=False, source_id=""):
    """Mel frames as feature sequences of width 128.

    Either one sequence with all clips' frames stacked in time, or one
    sequence per clip.
    """
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim == 2:
        spec = spec[None]
    frames = [FeatureSequence("audio", s.T, source_id) for s in spec]
    if per_clip:
        return frames
    return [FeatureSequence("audio", np.concatenate([f.data for f in frames]), source_id)]


def encode_audio(spec, model: SequenceClassifier, per_clip=False) -> np.ndarray:
    """Logits for one (4, 128, T) spectrogram.  In per-clip mode each clip is
    scored separately and the logits averaged."""
    seqs = spectrogram_sequences(spec, per_clip)
    return model.logits(seqs).mean(axis=0)


def spectrogram_shape(seconds=CLIP_SECONDS, sr=TARGET_SR):
    return (N_CLIPS, N_MELS, frame_count(int(math.ceil(seconds * sr))))
