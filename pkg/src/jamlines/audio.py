"""PCM WAV decoding, live-stream segmentation, and mel-spectrogram features."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np
from scipy import signal as sps


class DecodeError(ValueError):
    """Byte stream is not a well-formed RIFF/WAVE PCM file."""


class UnsupportedFormatError(DecodeError):
    """Well-formed WAV, but not 16-bit integer PCM."""


class SessionFormatError(RuntimeError):
    """Audio format changed mid-stream within one session."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Raw PCM audio: int16 samples shaped (frames, channels)."""

    samples: np.ndarray
    sample_rate: int
    channels: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.int16)
        if samples.ndim == 1:
            samples = samples[:, None]
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.channels not in (1, 2):
            raise ValueError("channels must be 1 or 2")
        if samples.ndim != 2 or samples.shape[1] != self.channels:
            raise ValueError(
                f"samples shaped {samples.shape} do not match channels={self.channels}"
            )
        if samples.shape[0] == 0:
            raise ValueError("clip must contain at least one frame")
        object.__setattr__(self, "samples", samples)

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate

    def mono_float(self) -> np.ndarray:
        """Channel-mean downmix scaled to [-1, 1] float64."""
        return self.samples.astype(np.float64).mean(axis=1) / 32768.0


def decode_wav(data: bytes) -> AudioClip:
    """Parse a RIFF/WAVE byte stream into an AudioClip.

    Only uncompressed 16-bit integer PCM is accepted; float or compressed
    encodings raise UnsupportedFormatError, anything malformed DecodeError.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("missing RIFF/WAVE header")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise DecodeError(f"truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise DecodeError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or payload is None:
        raise DecodeError("missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedFormatError(
            f"audio format {audio_format} is not uncompressed PCM"
        )
    if bits != 16:
        raise UnsupportedFormatError(f"{bits}-bit PCM is not supported, expected 16")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels not supported")
    if sample_rate <= 0:
        raise DecodeError("non-positive sample rate")
    if len(payload) == 0:
        raise DecodeError("empty data chunk")
    usable = len(payload) - len(payload) % (2 * channels)
    if usable == 0:
        raise DecodeError("data chunk shorter than one frame")
    samples = np.frombuffer(payload[:usable], dtype="<i2").reshape(-1, channels)
    return AudioClip(samples=samples, sample_rate=sample_rate, channels=channels)


def encode_wav(clip: AudioClip) -> bytes:
    """Serialize an AudioClip back to 16-bit PCM RIFF/WAVE bytes."""
    payload = clip.samples.astype("<i2").tobytes()
    block_align = 2 * clip.channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,
        clip.channels,
        clip.sample_rate,
        clip.sample_rate * block_align,
        block_align,
        16,
        b"data",
        len(payload),
    )
    return header + payload


class StreamSegmenter:
    """Cuts an in-order PCM stream into fixed, non-overlapping windows.

    One segmenter per session; not safe for concurrent pushes.  Partial
    trailing audio is held until the window completes or flush() zero-pads
    it at session end.
    """

    def __init__(self, sample_rate: int, channels: int = 1, window_seconds: float = 10.0):
        if window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        self.sample_rate = int(sample_rate)
        self.channels = int(channels)
        self.window_frames = int(round(window_seconds * sample_rate))
        self._buffer = np.zeros((0, self.channels), dtype=np.int16)
        self.frames_received = 0
        self.frames_emitted = 0

    @property
    def buffered_frames(self) -> int:
        return self._buffer.shape[0]

    def push(self, chunk: AudioClip | np.ndarray) -> list[AudioClip]:
        """Append a chunk; return every newly completed window, in order."""
        if isinstance(chunk, AudioClip):
            if chunk.sample_rate != self.sample_rate or chunk.channels != self.channels:
                raise SessionFormatError(
                    f"stream format changed: got {chunk.sample_rate} Hz "
                    f"x{chunk.channels}, session is {self.sample_rate} Hz "
                    f"x{self.channels}"
                )
            frames = chunk.samples
        else:
            frames = np.asarray(chunk, dtype=np.int16)
            if frames.ndim == 1:
                frames = frames.reshape(-1, self.channels)
            if frames.ndim != 2 or frames.shape[1] != self.channels:
                raise SessionFormatError(
                    f"chunk shaped {frames.shape} does not match "
                    f"{self.channels}-channel session"
                )
        self.frames_received += frames.shape[0]
        self._buffer = np.concatenate([self._buffer, frames], axis=0)
        clips = []
        while self._buffer.shape[0] >= self.window_frames:
            window, self._buffer = (
                self._buffer[: self.window_frames],
                self._buffer[self.window_frames :],
            )
            self.frames_emitted += self.window_frames
            clips.append(
                AudioClip(window, sample_rate=self.sample_rate, channels=self.channels)
            )
        return clips

    def flush(self) -> AudioClip | None:
        """Zero-pad and emit the trailing partial window, if any."""
        if self._buffer.shape[0] == 0:
            return None
        pad = np.zeros(
            (self.window_frames - self._buffer.shape[0], self.channels), dtype=np.int16
        )
        window = np.concatenate([self._buffer, pad], axis=0)
        self.frames_emitted += self._buffer.shape[0]
        self._buffer = np.zeros((0, self.channels), dtype=np.int16)
        return AudioClip(window, sample_rate=self.sample_rate, channels=self.channels)


def segment_stream(
    chunks: Iterable[AudioClip], window_seconds: float = 10.0, flush: bool = False
) -> Iterator[AudioClip]:
    """Segment an in-order chunk sequence into complete windows.

    With flush=True the trailing partial window is zero-padded and emitted
    once the sequence ends.
    """
    segmenter = None
    for chunk in chunks:
        if segmenter is None:
            segmenter = StreamSegmenter(
                chunk.sample_rate, chunk.channels, window_seconds
            )
        yield from segmenter.push(chunk)
    if flush and segmenter is not None:
        final = segmenter.flush()
        if final is not None:
            yield final


@dataclass(frozen=True)
class SpectrogramParams:
    """Everything that fixes the shape and scaling of the mel grid."""

    target_rate: int = 22050
    fft_size: int = 2048
    hop: int = 512
    mel_bands: int = 128
    db_floor: float = -80.0
    db_ceiling: float = 0.0
    frame_pad_to: int = 432

    def __post_init__(self):
        if self.hop > self.fft_size:
            raise ValueError("hop must not exceed fft_size")
        if self.hop <= 0 or self.fft_size <= 0:
            raise ValueError("hop and fft_size must be positive")
        if self.mel_bands <= 0:
            raise ValueError("mel_bands must be positive")
        if self.db_floor >= self.db_ceiling:
            raise ValueError("db_floor must be below db_ceiling")
        if self.frame_pad_to <= 0:
            raise ValueError("frame_pad_to must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.mel_bands, self.frame_pad_to)

    def to_dict(self) -> dict:
        return {
            "target_rate": self.target_rate,
            "fft_size": self.fft_size,
            "hop": self.hop,
            "mel_bands": self.mel_bands,
            "db_floor": self.db_floor,
            "db_ceiling": self.db_ceiling,
            "frame_pad_to": self.frame_pad_to,
        }


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Normalized mel grid in [0, 1], shaped (mel_bands, frame_pad_to)."""

    grid: np.ndarray
    params: SpectrogramParams

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float32)
        if grid.shape != self.params.shape:
            raise ValueError(f"grid shaped {grid.shape}, params say {self.params.shape}")
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise ValueError("grid cells must lie in [0, 1]")
        object.__setattr__(self, "grid", grid)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(mel_bands: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Hz positions of the mel_bands + 2 triangle edge points (0 .. Nyquist)."""
    mels = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), mel_bands + 2)
    return mel_to_hz(mels)


def mel_filterbank(mel_bands: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Triangular mel filters over rfft bins, shaped (mel_bands, fft_size//2+1)."""
    edges = mel_band_edges(mel_bands, sample_rate, fft_size)
    bin_hz = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    weights = np.zeros((mel_bands, bin_hz.shape[0]))
    for k in range(mel_bands):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (bin_hz - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - mid, 1e-12)
        weights[k] = np.clip(np.minimum(up, down), 0.0, None)
    return weights


def _resample(mono: np.ndarray, native_rate: int, target_rate: int) -> np.ndarray:
    if native_rate == target_rate:
        return mono
    ratio = Fraction(target_rate, native_rate)
    return sps.resample_poly(mono, ratio.numerator, ratio.denominator)


def n_stft_frames(n_samples: int, hop: int) -> int:
    """Frame count for centered framing: 1 + floor(n / hop)."""
    return 1 + n_samples // hop


def to_mel_spectrogram(clip: AudioClip, params: SpectrogramParams) -> MelSpectrogram:
    """Resample, downmix, and render a clip as a normalized mel grid.

    Magnitude STFT with centered Hann framing, mel filterbank, decibels
    clamped to [db_floor, db_ceiling], then affine rescale to [0, 1].  The
    time axis is zero-padded or cropped to frame_pad_to so the output shape
    is constant for a given params.
    """
    mono = _resample(clip.mono_float(), clip.sample_rate, params.target_rate)
    if mono.shape[0] < params.fft_size:
        raise ValueError(
            f"clip has {mono.shape[0]} samples at {params.target_rate} Hz, "
            f"shorter than one {params.fft_size}-point FFT frame"
        )
    half = params.fft_size // 2
    padded = np.pad(mono, (half, half))
    n_frames = n_stft_frames(mono.shape[0], params.hop)
    idx = np.arange(n_frames)[:, None] * params.hop + np.arange(params.fft_size)[None, :]
    window = sps.get_window("hann", params.fft_size, fftbins=True)
    frames = padded[idx] * window
    magnitude = np.abs(np.fft.rfft(frames, axis=1)).T / window.sum()
    mel = mel_filterbank(params.mel_bands, params.target_rate, params.fft_size) @ magnitude
    db = 20.0 * np.log10(np.maximum(mel, 1e-12))
    db = np.clip(db, params.db_floor, params.db_ceiling)
    grid = (db - params.db_floor) / (params.db_ceiling - params.db_floor)
    if grid.shape[1] < params.frame_pad_to:
        grid = np.pad(grid, ((0, 0), (0, params.frame_pad_to - grid.shape[1])))
    else:
        grid = grid[:, : params.frame_pad_to]
    return MelSpectrogram(grid=grid, params=params)
