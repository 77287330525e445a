"""Per-frame audio features (onset envelope, MFCC, chroma, peaks, RMS) and tempograms.

All functions are deterministic and operate on float64 numpy arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

from . import kernels

N_FFT = 1024
N_MELS = 40
N_MFCC = 20
SUPPORTED_RATES = (30, 100, 300)
TEMPO_RANGE_BPM = (30.0, 300.0)

FEATURE_COLUMNS = (
    ["envelope"]
    + [f"mfcc_{i}" for i in range(N_MFCC)]
    + [f"chroma_{n}" for n in ("C", "Cs", "D", "Ds", "E", "F", "Fs", "G", "Gs", "A", "As", "B")]
    + ["peaks", "rms"]
)
PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError(f"audio must be mono, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("audio contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    feature_rate: float
    columns: list[str] = field(default_factory=lambda: list(FEATURE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.frames[:, self.columns.index(name)]


@dataclass
class Tempogram:
    values: np.ndarray  # windows x tempi
    bpm: np.ndarray  # strictly increasing
    window_s: float
    frame_rate: float

    def dominant_bpm(self) -> float:
        """Tempo with the largest window-summed autocorrelation."""
        return float(self.bpm[int(np.argmax(self.values.sum(axis=0)))])


# ------------------------------------------------------------------ spectra

def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual analysis window
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered frames (reflect padding) as a [frames x n_fft] view."""
    if hop < 1:
        raise FeatureConfigError("hop must be >= 1")
    pad = n_fft // 2
    if len(samples) <= pad:
        raise FeatureConfigError(f"clip of {len(samples)} samples is shorter than half an FFT frame ({pad})")
    padded = np.pad(samples, pad, mode="reflect")
    n_frames = 1 + (len(padded) - n_fft) // hop
    if n_frames < 1:
        raise FeatureConfigError("clip shorter than n_fft after padding")
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def stft_mag(clip: AudioClip, n_fft: int = N_FFT, hop: int = 160) -> np.ndarray:
    """Magnitude spectrogram [frames x n_fft/2+1] with a Hann window."""
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise FeatureConfigError(f"n_fft must be a power of two, got {n_fft}")
    frames = frame_signal(clip.samples, n_fft, hop)
    return np.abs(np.fft.rfft(frames * _hann(n_fft), axis=1))


def onset_envelope(spec: np.ndarray) -> np.ndarray:
    """Mean half-wave-rectified log-magnitude flux; frame 0 is zero."""
    logs = np.log1p(spec)
    env = np.zeros(len(spec))
    if len(spec) > 1:
        env[1:] = np.maximum(0.0, np.diff(logs, axis=0)).mean(axis=1)
    return env


def pick_peaks(envelope: np.ndarray, feature_rate: float, guard_s: float = 0.15) -> np.ndarray:
    """One-hot column marking maxima above mean+1 std that dominate a +-guard window."""
    env = np.ascontiguousarray(envelope, dtype=np.float64)
    if len(env) == 0:
        return np.zeros(0)
    thr = env.mean() + env.std()
    guard = max(1, int(round(guard_s * feature_rate)))
    return kernels.pick_peaks(env, guard, float(thr))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular HTK-mel filters [n_mels x n_fft/2+1] spanning 0 .. sample_rate/2."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(spec: np.ndarray, sample_rate: int, n_mfcc: int = N_MFCC, log_floor: float = 1e-10) -> np.ndarray:
    n_fft = 2 * (spec.shape[1] - 1)
    mel = (spec**2) @ mel_filterbank(sample_rate, n_fft).T
    return scipy.fft.dct(np.log(np.maximum(mel, log_floor)), type=2, norm="ortho", axis=1)[:, :n_mfcc]


def chroma_map(sample_rate: int, n_fft: int = N_FFT, fmin: float = 55.0) -> np.ndarray:
    """Pitch class of each FFT bin (nearest semitone, A440), -1 below ``fmin``."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    cls = np.full(len(freqs), -1)
    ok = freqs >= fmin
    midi = np.rint(69 + 12 * np.log2(freqs[ok] / 440.0)).astype(int)
    cls[ok] = midi % 12
    return cls


def chroma(spec: np.ndarray, sample_rate: int, cens: bool = False) -> np.ndarray:
    n_fft = 2 * (spec.shape[1] - 1)
    cls = chroma_map(sample_rate, n_fft)
    power = spec**2
    out = np.zeros((len(spec), 12))
    for c in range(12):
        out[:, c] = power[:, cls == c].sum(axis=1)
    out = _l2_normalize(out)
    if cens:
        out = _cens(out)
    return out


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def _cens(c: np.ndarray, win: int = 41) -> np.ndarray:
    # quantize L1-normalized energy, smooth over time, renormalize
    l1 = c.sum(axis=1, keepdims=True)
    p = np.divide(c, l1, out=np.zeros_like(c), where=l1 > 0)
    q = np.zeros_like(p)
    for thr in (0.05, 0.1, 0.2, 0.4):
        q += p > thr
    w = np.hanning(win + 2)[1:-1]
    sm = np.stack([np.convolve(q[:, k], w, mode="same") for k in range(12)], axis=1)
    return _l2_normalize(sm)


def rms(clip: AudioClip, n_fft: int = N_FFT, hop: int = 160) -> np.ndarray:
    frames = frame_signal(clip.samples, n_fft, hop)
    return np.sqrt(np.mean(frames**2, axis=1))


def assemble_features(clip: AudioClip, feature_rate: int = 100, n_fft: int = N_FFT, cens: bool = False) -> FeatureMatrix:
    """35 columns per frame at ``feature_rate`` frames per second."""
    if feature_rate not in SUPPORTED_RATES:
        raise FeatureConfigError(f"unsupported feature rate {feature_rate}; choose one of {SUPPORTED_RATES}")
    sr = clip.sample_rate
    hop = int(round(sr / feature_rate))
    n_rows = int(round(len(clip.samples) * feature_rate / sr))
    spec = stft_mag(clip, n_fft, hop)[:n_rows]
    env = onset_envelope(spec)
    cols = [
        env[:, None],
        mfcc(spec, sr),
        chroma(spec, sr, cens=cens),
        pick_peaks(env, feature_rate)[:, None],
        rms(clip, n_fft, hop)[:n_rows, None],
    ]
    return FeatureMatrix(np.concatenate(cols, axis=1), float(feature_rate))


# ---------------------------------------------------------------- tempogram

def tempo_lags(frame_rate: float, window: int, bpm_range=TEMPO_RANGE_BPM) -> np.ndarray:
    """Autocorrelation lags (frames) inside the tempo range, ordered by increasing BPM."""
    lo = int(np.ceil(60.0 * frame_rate / bpm_range[1]))
    hi = min(int(np.floor(60.0 * frame_rate / bpm_range[0])), window - 1)
    lo = max(lo, 1)
    if hi < lo:
        raise FeatureConfigError(f"window of {window} frames holds no lag in {bpm_range} BPM at {frame_rate} fps")
    return np.arange(hi, lo - 1, -1)


def window_starts(n: int, window: int, hop: int) -> np.ndarray:
    if window > n:
        raise FeatureConfigError(f"tempogram window ({window} frames) longer than envelope ({n} frames)")
    return np.arange(0, n - window + 1, max(1, hop))


def tempogram(envelope: np.ndarray, feature_rate: float, window_s: float, hop_s: float | None = None) -> Tempogram:
    """Rectified, normalized autocorrelation of the mean-removed envelope per window."""
    env = np.asarray(envelope, dtype=np.float64)
    window = int(round(window_s * feature_rate))
    hop = int(round((hop_s if hop_s is not None else window_s / 4) * feature_rate))
    starts = window_starts(len(env), window, hop)
    lags = tempo_lags(feature_rate, window)
    rows = []
    for s in starts:
        x = env[s:s + window]
        x = x - x.mean()
        ac0 = float(np.dot(x, x))
        if ac0 <= 1e-12 * window:
            rows.append(np.zeros(len(lags)))
            continue
        ac = np.array([np.dot(x[:window - lag], x[lag:]) for lag in lags]) / ac0
        rows.append(np.maximum(ac, 0.0))
    return Tempogram(np.array(rows), 60.0 * feature_rate / lags, window_s, feature_rate)


# ----------------------------------------------------------------------- io

def read_wav(path) -> AudioClip:
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, int(sr))


def write_wav(path, clip: AudioClip, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(clip.samples * 32767), -32768, 32767).astype(np.int16)
    else:
        data = clip.samples.astype(np.float32)
    wavfile.write(path, clip.sample_rate, data)


def write_feature_csv(path, features: FeatureMatrix) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(features.columns)
        for row in features.frames:
            w.writerow([repr(float(v)) for v in row])
