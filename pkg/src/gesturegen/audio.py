"""Speech features: log-mel spectrogram plus log frame energy at 60 fps.

Framing uses a Hann window of 50 ms and a 12.5 ms hop (2400 / 600 samples at
48 kHz), frames centered on ``k * hop`` with zero padding, an FFT size equal
to the next power of two above the window, and an HTK-mel triangular
filterbank (peak-normalized, 0-8 kHz) applied to magnitudes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-5
N_MELS = 80
FEATURE_DIM = N_MELS + 1
_FORMAT_NAMES = {1: "PCM", 2: "MS-ADPCM", 3: "IEEE-float", 6: "A-law", 7: "mu-law",
                 0x11: "IMA-ADPCM", 0x55: "MP3", 0xFFFE: "extensible"}


class AudioFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError("empty waveform")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(data: bytes) -> Waveform:
    """Decode 16/24-bit PCM RIFF/WAVE bytes; stereo is averaged to mono."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file (truncated header?)")
    pos, fmt, pcm = 12, None, None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise AudioFormatError("truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == 0xFFFE and len(body) >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real format code leads the subformat GUID
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None or pcm is None:
        raise AudioFormatError("missing fmt or data chunk (truncated file?)")
    code, channels, rate, _, _, bits = fmt
    if code != 1:
        raise AudioFormatError(f"unsupported WAV format {_FORMAT_NAMES.get(code, hex(code))}; need PCM")
    if bits not in (16, 24):
        raise AudioFormatError(f"unsupported PCM bit depth {bits}; need 16 or 24")
    width = bits // 8
    n = len(pcm) // (width * channels)
    raw = np.frombuffer(pcm[:n * width * channels], dtype=np.uint8).reshape(n, channels, width)
    if bits == 16:
        ints = raw.copy().view("<i2")[..., 0].astype(np.int64)
    else:
        ints = (raw[..., 0].astype(np.int64) | (raw[..., 1].astype(np.int64) << 8)
                | (raw[..., 2].astype(np.int64) << 16))
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
    full_scale = float(1 << (bits - 1))
    samples = np.clip(ints / full_scale, -1.0, 1.0).mean(axis=1)
    return Waveform(samples, rate)


def write_wav(w: Waveform) -> bytes:
    """Encode as 16-bit mono PCM."""
    ints = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16)
    return (b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
            + b"fmt " + struct.pack("<I", 16) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)


# -- framing ---------------------------------------------------------------------
def frame_params(sample_rate: int, window_ms: float = 50.0, hop_ms: float = 12.5) -> tuple[int, int, int]:
    """(window, hop, n_fft) in samples."""
    window = int(round(sample_rate * window_ms / 1000.0))
    hop = int(round(sample_rate * hop_ms / 1000.0))
    n_fft = 1 << int(np.ceil(np.log2(window)))
    return window, hop, n_fft


def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Hann-windowed frames centered at multiples of ``hop``."""
    if len(samples) < window:
        buf = np.zeros(window)
        buf[:len(samples)] = samples
        return (buf * hann(window))[None]
    half = window // 2
    padded = np.pad(samples, (half, half))
    n = 1 + len(samples) // hop
    idx = np.arange(n)[:, None] * hop + np.arange(window)[None, :]
    return padded[idx] * hann(window)


def stft(w: Waveform, window_ms: float = 50.0, hop_ms: float = 12.5, block: int = 1024) -> np.ndarray:
    """One-sided complex spectrogram ``[frames, n_fft // 2 + 1]``."""
    window, hop, n_fft = frame_params(w.sample_rate, window_ms, hop_ms)
    frames = _frames(w.samples, window, hop)
    out = np.empty((len(frames), n_fft // 2 + 1), dtype=np.complex128)
    for s in range(0, len(frames), block):
        out[s:s + block] = np.fft.rfft(frames[s:s + block], n=n_fft, axis=1)
    return out


def frame_energy(w: Waveform, window_ms: float = 50.0, hop_ms: float = 12.5) -> np.ndarray:
    """Log of summed squared Hann-windowed samples per frame."""
    window, hop, _ = frame_params(w.sample_rate, window_ms, hop_ms)
    frames = _frames(w.samples, window, hop)
    return log_amplitude((frames * frames).sum(axis=1))


# -- mel --------------------------------------------------------------------------
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, channels: int = N_MELS, fmin: float = 0.0,
                   fmax: float = 8000.0) -> np.ndarray:
    """``[channels, n_fft // 2 + 1]`` triangular filters with unit peaks.

    Adjacent triangles share edges, so the filters sum to one on every bin
    between the first and last center frequency.
    """
    fmax = min(fmax, sample_rate / 2.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), channels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None] - lo) / (center - lo)
    falling = (hi - freqs[None]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_centers(channels: int = N_MELS, fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), channels + 2))[1:-1]


def mel_project(magnitudes: np.ndarray, sample_rate: int, channels: int = N_MELS,
                fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    n_fft = 2 * (magnitudes.shape[-1] - 1)
    return magnitudes @ mel_filterbank(sample_rate, n_fft, channels, fmin, fmax).T


def log_amplitude(x: np.ndarray, eps: float = LOG_FLOOR) -> np.ndarray:
    return np.log(np.maximum(x, eps))


# -- resampling -----------------------------------------------------------------------
def resample_features(seq: np.ndarray, source_rate: float, target_rate: float = 60.0) -> np.ndarray:
    """Linear interpolation of ``[T, C]`` frames from ``source_rate`` to ``target_rate``."""
    seq = np.asarray(seq, dtype=float)
    if len(seq) == 0:
        raise ValueError("cannot resample an empty feature sequence")
    if source_rate <= 0 or target_rate <= 0:
        raise ValueError("rates must be positive")
    if source_rate == target_rate:
        return seq.copy()
    duration = (len(seq) - 1) / source_rate
    n = int(np.floor(duration * target_rate + 1e-9)) + 1
    src_pos = np.arange(n) * (source_rate / target_rate)
    i0 = np.minimum(np.floor(src_pos).astype(int), len(seq) - 1)
    i1 = np.minimum(i0 + 1, len(seq) - 1)
    a = (src_pos - i0)[:, None]
    return seq[i0] * (1.0 - a) + seq[i1] * a


def speech_features(w: Waveform, target_rate: float = 60.0, window_ms: float = 50.0,
                    hop_ms: float = 12.5, fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """``[T, 81]`` log-mel amplitudes and log frame energy at ``target_rate`` fps."""
    spec = np.abs(stft(w, window_ms, hop_ms))
    mel = log_amplitude(mel_project(spec, w.sample_rate, N_MELS, fmin, fmax))
    energy = frame_energy(w, window_ms, hop_ms)
    feats = np.concatenate([mel, energy[:, None]], axis=1)
    return resample_features(feats, 1000.0 / hop_ms, target_rate)
