"""Acoustic and prosodic front-end.

Audio is framed at 16 ms with 9 ms overlap (256/112 samples at 16 kHz).
Each frame yields 16 static MFCCs (coefficients 1..16 of a 26-filter
log mel spectrum) plus 16 deltas, and a 3-value prosodic contour row
(log-energy, autocorrelation pitch proxy, zero-crossing rate).  Segment
level prosodic vectors pool contour rows over a span of frames.
"""
from __future__ import annotations

import io
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.fft

from .errors import (
    AudioFormatError,
    DegenerateSegmentError,
    DocumentError,
    EmptyInputError,
    TooShortError,
)

SAMPLE_RATE = 16000
N_STATIC = 16
FEATURE_DIM = 2 * N_STATIC
PROSODIC_DIM = 6
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
VOICING_THRESHOLD = 0.3
PITCH_RANGE_HZ = (60.0, 400.0)

FEAT_MAGIC = "SUPRAHMM-FEAT v1"


@dataclass(frozen=True)
class AudioClip:
    """Mono PCM audio; samples are kept in 16-bit amplitude units."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError("only mono audio is supported")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class FrameSpec:
    frame_ms: float = 16.0
    overlap_ms: float = 9.0
    preemphasis: float = 0.97

    def __post_init__(self):
        if not 0 < self.overlap_ms < self.frame_ms:
            raise ValueError("need 0 < overlap < frame length")
        if not 0 <= self.preemphasis < 1:
            raise ValueError("pre-emphasis coefficient must lie in [0, 1)")

    def frame_length(self, rate: int) -> int:
        return int(round(self.frame_ms * rate / 1000.0))

    def hop_length(self, rate: int) -> int:
        return int(round((self.frame_ms - self.overlap_ms) * rate / 1000.0))


@dataclass(frozen=True)
class FeatureSequence:
    """Frame-major observation matrix for one utterance."""

    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise EmptyInputError("a feature sequence needs at least one frame")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ProsodicSequence:
    """One prosodic vector per segment: mean/variance of log-energy,
    mean/variance of the pitch proxy, duration fraction and mean
    zero-crossing rate."""

    segments: np.ndarray
    durations: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        segs = np.atleast_2d(np.asarray(self.segments, dtype=np.float64))
        if segs.shape[0] < 1:
            raise EmptyInputError("a prosodic sequence needs at least one segment")
        segs.flags.writeable = False
        object.__setattr__(self, "segments", segs)

    @property
    def segment_count(self) -> int:
        return self.segments.shape[0]


# -- signal conditioning -------------------------------------------------

def preemphasize(clip: AudioClip, coeff: float = 0.97) -> AudioClip:
    if not 0 <= coeff < 1:
        raise ValueError("pre-emphasis coefficient must lie in [0, 1)")
    x = clip.samples
    if x.size == 0:
        raise EmptyInputError("cannot pre-emphasize an empty clip")
    y = x.copy()
    y[1:] = x[1:] - coeff * x[:-1]
    return AudioClip(y, clip.sample_rate)


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        raise TooShortError(f"clip of {n_samples} samples is shorter than one frame ({frame_len})")
    return (n_samples - frame_len) // hop + 1


def frame_signal(clip: AudioClip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Slice the clip into overlapping frames; the partial tail is dropped.

    Returns an array of shape ``(n_frames, frame_len)``.
    """
    flen = spec.frame_length(clip.sample_rate)
    hop = spec.hop_length(clip.sample_rate)
    n = frame_count(len(clip), flen, hop)
    idx = np.arange(flen)[None, :] + hop * np.arange(n)[:, None]
    return clip.samples[idx]


# -- MFCC ----------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = 26, n_fft: int = 512, rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale, evaluated at the
    rfft bin frequencies.  Shape ``(n_filters, n_fft // 2 + 1)``."""
    if fmax is None:
        fmax = rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


@dataclass(frozen=True)
class MfccConfig:
    n_static: int = N_STATIC
    n_filters: int = 26
    n_fft: int = 512
    log_floor: float = LOG_FLOOR

    def as_dict(self) -> dict:
        return {"n_static": self.n_static, "n_filters": self.n_filters,
                "n_fft": self.n_fft, "log_floor": self.log_floor}


def static_mfcc(clip: AudioClip, spec: FrameSpec = FrameSpec(),
                config: MfccConfig = MfccConfig()) -> np.ndarray:
    emphasized = preemphasize(clip, spec.preemphasis)
    frames = frame_signal(emphasized, spec)
    window = np.hamming(frames.shape[1])
    if frames.shape[1] > config.n_fft:
        raise ValueError("FFT size must cover the frame length")
    spectrum = np.abs(np.fft.rfft(frames * window, n=config.n_fft, axis=1))
    fbank = mel_filterbank(config.n_filters, config.n_fft, clip.sample_rate)
    energies = spectrum @ fbank.T
    log_e = np.log(np.maximum(energies, config.log_floor))
    ceps = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)
    return ceps[:, 1:config.n_static + 1]


def delta_append(static: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Append regression deltas, replicating the edge frames."""
    static = np.atleast_2d(np.asarray(static, dtype=np.float64))
    if static.shape[0] < 1:
        raise EmptyInputError("delta_append needs at least one frame")
    n = static.shape[0]
    padded = np.pad(static, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(d * d for d in range(1, window + 1))
    delta = np.zeros_like(static)
    for d in range(1, window + 1):
        delta += d * (padded[window + d:window + d + n] - padded[window - d:window - d + n])
    return np.hstack([static, delta / denom])


def mfcc_extract(clip: AudioClip, spec: FrameSpec = FrameSpec(), n_static: int = N_STATIC,
                 source_id: str = "", config: MfccConfig | None = None) -> FeatureSequence:
    if config is None:
        config = MfccConfig(n_static=n_static)
    static = static_mfcc(clip, spec, config)
    return FeatureSequence(delta_append(static), source_id)


# -- prosody -------------------------------------------------------------

def _frame_contour(frames: np.ndarray, rate: int) -> np.ndarray:
    """Per-frame (log-energy, pitch proxy in Hz, zero-crossing rate)."""
    n, flen = frames.shape
    energy = np.mean(frames ** 2, axis=1)
    log_energy = np.log(np.maximum(energy, LOG_FLOOR))
    signs = np.signbit(frames)
    zcr = np.count_nonzero(signs[:, 1:] != signs[:, :-1], axis=1) / max(flen - 1, 1)
    zcr = np.where(energy > LOG_FLOOR, zcr, 0.0)

    pitch = np.zeros(n)
    min_lag = max(1, int(np.ceil(rate / PITCH_RANGE_HZ[1])))
    max_lag = min(flen // 2, int(rate / PITCH_RANGE_HZ[0]))
    if max_lag > min_lag:
        centred = frames - frames.mean(axis=1, keepdims=True)
        r0 = np.sum(centred ** 2, axis=1)
        lags = np.arange(min_lag, max_lag + 1)
        ac = np.stack([np.sum(centred[:, :flen - k] * centred[:, k:], axis=1) for k in lags], axis=1)
        voiced = r0 > LOG_FLOOR
        norm = np.where(voiced[:, None], ac / np.where(voiced, r0, 1.0)[:, None], 0.0)
        best = np.argmax(norm, axis=1)
        peak = norm[np.arange(n), best]
        ok = voiced & (peak >= VOICING_THRESHOLD)
        pitch[ok] = rate / lags[best[ok]]
    return np.column_stack([log_energy, pitch, zcr])


def prosodic_contour(clip: AudioClip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Frame-level contour aligned one-to-one with the MFCC frames."""
    return _frame_contour(frame_signal(clip, spec), clip.sample_rate)


def pool_contour(rows: np.ndarray, duration_fraction: float) -> np.ndarray:
    rows = np.atleast_2d(rows)
    return np.array([
        rows[:, 0].mean(), rows[:, 0].var(),
        rows[:, 1].mean(), rows[:, 1].var(),
        duration_fraction, rows[:, 2].mean(),
    ])


def _check_ranges(ranges: Sequence[Tuple[int, int]], total: int, unit: str):
    if len(ranges) == 0:
        raise EmptyInputError("no segments given")
    prev_end = 0
    for start, end in ranges:
        if end <= start:
            raise DegenerateSegmentError(f"empty {unit} range [{start}, {end})")
        if start < prev_end or end > total:
            raise DegenerateSegmentError(
                f"{unit} ranges must be ordered, non-overlapping and within [0, {total})")
        prev_end = end


def prosodic_extract(clip: AudioClip, boundaries: Sequence[Tuple[int, int]],
                     spec: FrameSpec = FrameSpec()) -> ProsodicSequence:
    """Prosodic vector for each half-open sample range in ``boundaries``.

    A range shorter than one frame is analysed as a single short frame.
    """
    _check_ranges(boundaries, len(clip), "sample")
    flen = spec.frame_length(clip.sample_rate)
    hop = spec.hop_length(clip.sample_rate)
    vectors = []
    for start, end in boundaries:
        seg = clip.samples[start:end]
        if seg.size >= flen:
            n = frame_count(seg.size, flen, hop)
            frames = seg[np.arange(flen)[None, :] + hop * np.arange(n)[:, None]]
        else:
            frames = seg[None, :]
        rows = _frame_contour(frames, clip.sample_rate)
        vectors.append(pool_contour(rows, (end - start) / len(clip)))
    durations = tuple(float(end - start) for start, end in boundaries)
    return ProsodicSequence(np.vstack(vectors), durations)


def prosodic_from_contour(contour: np.ndarray,
                          frame_ranges: Sequence[Tuple[int, int]]) -> ProsodicSequence:
    """Pool a stored frame contour over half-open frame ranges."""
    contour = np.atleast_2d(contour)
    total = contour.shape[0]
    _check_ranges(frame_ranges, total, "frame")
    vectors = [pool_contour(contour[a:b], (b - a) / total) for a, b in frame_ranges]
    return ProsodicSequence(np.vstack(vectors), tuple(float(b - a) for a, b in frame_ranges))


# -- file formats --------------------------------------------------------

def read_wav(path: Union[str, Path, io.BufferedIOBase], expected_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a 16-bit mono PCM WAVE file; other formats are rejected."""
    try:
        with wave.open(str(path) if isinstance(path, Path) else path, "rb") as wf:
            if wf.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM samples")
            if wf.getframerate() != expected_rate:
                raise AudioFormatError(
                    f"{path}: sample rate {wf.getframerate()} Hz, expected {expected_rate} Hz")
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: unreadable WAVE data ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2")
    if samples.size == 0:
        raise EmptyInputError(f"{path}: no audio samples")
    return AudioClip(samples.astype(np.float64), expected_rate)


def write_wav(path: Union[str, Path], clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def encode_matrix(matrix: np.ndarray) -> bytes:
    matrix = np.atleast_2d(np.asarray(matrix))
    header = f"{FEAT_MAGIC} {matrix.shape[0]} {matrix.shape[1]}\n".encode("ascii")
    return header + np.ascontiguousarray(matrix, dtype="<f4").tobytes()


def decode_matrix(blob: bytes) -> np.ndarray:
    head, sep, body = blob.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 4 or " ".join(parts[:2]) != FEAT_MAGIC:
        raise DocumentError("not a SUPRAHMM-FEAT v1 file")
    rows, cols = int(parts[2]), int(parts[3])
    if len(body) != rows * cols * 4:
        raise DocumentError(f"payload holds {len(body)} bytes, expected {rows * cols * 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_features(path: Union[str, Path], matrix: np.ndarray) -> None:
    Path(path).write_bytes(encode_matrix(matrix))


def read_features(path: Union[str, Path]) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())
