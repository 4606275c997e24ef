"""WAV ingestion, STFT magnitude and log-mel spectrograms."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DSPError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise DSPError("waveform contains non-finite samples")
        if np.any(np.abs(self.samples) > 1.0):
            raise DSPError("waveform samples must lie in [-1, 1]")


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    window_size: int = 1024
    hop_size: int = 256
    window: str = "hann"
    sample_rate: int = 22050
    magnitude_eps: float = 1e-9
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    mel_norm: str = "slaney"
    log_floor: float = 1e-5

    def __post_init__(self):
        if not 0 < self.window_size <= self.fft_size:
            raise DSPError(f"window_size {self.window_size} must be in (0, fft_size={self.fft_size}]")
        if not 0 < self.hop_size <= self.window_size:
            raise DSPError(f"hop_size {self.hop_size} must be in (0, window_size={self.window_size}]")
        if self.window not in ("hann",):
            raise DSPError(f"unsupported window {self.window!r}")
        if self.mel_norm not in ("slaney", "none"):
            raise DSPError(f"mel_norm must be 'slaney' or 'none', got {self.mel_norm!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def mel_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax


SCALE_TAGS = {"linear": 0, "mel": 1, "log-mel": 2}


@dataclass
class Spectrogram:
    """[frames, bins] values plus the configuration that produced them."""

    values: np.ndarray
    scale: str
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DSPError(f"spectrogram must be 2-D, got {self.values.shape}")
        if self.scale not in SCALE_TAGS:
            raise DSPError(f"unknown scale {self.scale!r}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


# ------------------------------------------------------------------ WAV I/O


def load_wav(path: str | Path) -> Waveform:
    """Read a mono 16-bit PCM WAV file into [-1, 1) floats."""
    try:
        with wave.open(str(path), "rb") as f:
            if f.getcomptype() != "NONE":
                raise DSPError(f"{path}: compressed WAV ({f.getcomptype()}) is not supported")
            if f.getnchannels() != 1:
                raise DSPError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getsampwidth() != 2:
                raise DSPError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit samples")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DSPError(f"{path}: not a PCM WAV file ({exc})") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def save_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


# --------------------------------------------------------------------- STFT


def hann_window(cfg: StftConfig) -> np.ndarray:
    """Periodic Hann window of ``window_size``, centered in ``fft_size``."""
    n = np.arange(cfg.window_size)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.window_size)
    left = (cfg.fft_size - cfg.window_size) // 2
    return np.pad(win, (left, cfg.fft_size - cfg.window_size - left))


def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reflect-pad by fft_size/2 and cut [frames, fft_size] windows."""
    if samples.size < 1:
        raise DSPError("cannot analyse an empty waveform")
    pad = cfg.fft_size // 2
    padded = np.pad(samples, pad, mode="reflect") if samples.size > 1 else np.full(samples.size + 2 * pad, samples[0])
    n_frames = 1 + samples.size // cfg.hop_size
    starts = np.arange(n_frames) * cfg.hop_size
    return padded[starts[:, None] + np.arange(cfg.fft_size)[None, :]]


def stft_magnitude(w: Waveform, cfg: StftConfig = StftConfig(), eps: float | None = None) -> Spectrogram:
    """sqrt(re^2 + im^2 + eps) of the Hann-windowed STFT, [frames, fft_size/2 + 1]."""
    eps = cfg.magnitude_eps if eps is None else eps
    frames = frame_signal(w.samples, cfg) * hann_window(cfg)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    mag = np.sqrt(spec.real**2 + spec.imag**2 + eps)
    return Spectrogram(mag, "linear", cfg)


# ---------------------------------------------------------------------- mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 frequencies (Hz) equally spaced in mel: lower edge, centers, upper edge."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels: int = 80, fmin: float = 0.0, fmax: float | None = None,
                   cfg: StftConfig = StftConfig(), norm: str | None = None) -> np.ndarray:
    """Triangular mel filters, [n_mels, fft_size/2 + 1].

    With ``norm="slaney"`` each triangle is scaled by 2 / (upper - lower) Hz
    so that filters have roughly constant energy.
    """
    fmax = cfg.sample_rate / 2 if fmax is None else fmax
    norm = cfg.mel_norm if norm is None else norm
    if not 0 <= fmin < fmax <= cfg.sample_rate / 2:
        raise DSPError(f"invalid mel range: need 0 <= fmin < fmax <= {cfg.sample_rate / 2}, got {fmin}, {fmax}")
    if n_mels < 1:
        raise DSPError("n_mels must be positive")
    freqs = np.linspace(0.0, cfg.sample_rate / 2, cfg.n_bins)
    edges = mel_edges(n_mels, fmin, fmax)
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1] - edges[:-2])[:, None]
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:] - edges[1:-1])[:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    if norm == "slaney":
        fb *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return fb


def mel_spectrogram(w: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """log(max(mel_filterbank @ |STFT|, log_floor)), [frames, n_mels]."""
    lin = stft_magnitude(w, cfg)
    return log_mel_from_linear(lin, cfg)


def log_mel_from_linear(lin: Spectrogram, cfg: StftConfig | None = None) -> Spectrogram:
    cfg = lin.config if cfg is None else cfg
    fb = mel_filterbank(cfg.n_mels, cfg.fmin, cfg.mel_fmax, cfg)
    mel = lin.values @ fb.T
    return Spectrogram(np.log(np.maximum(mel, cfg.log_floor)), "log-mel", cfg)


# ---------------------------------------------------------- serialization

_MAGIC = b"SPEC"
_HEADER = struct.Struct("<4sIIB")


def write_spec_binary(path: str | Path, spec: Spectrogram) -> None:
    """Header {b"SPEC", u32 frames, u32 bins, u8 scale tag}, then <f8 row-major."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, spec.frames, spec.bins, SCALE_TAGS[spec.scale]))
        f.write(np.ascontiguousarray(spec.values, dtype="<f8").tobytes())


def read_spec_binary(path: str | Path) -> Spectrogram:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DSPError(f"{path}: truncated header")
    magic, frames, bins, tag = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DSPError(f"{path}: bad magic {magic!r}")
    scale = {v: k for k, v in SCALE_TAGS.items()}.get(tag)
    if scale is None:
        raise DSPError(f"{path}: unknown scale tag {tag}")
    body = data[_HEADER.size :]
    if len(body) != 8 * frames * bins:
        raise DSPError(f"{path}: expected {frames}x{bins} float64 values, got {len(body)} bytes")
    return Spectrogram(np.frombuffer(body, dtype="<f8").reshape(frames, bins).copy(), scale)


def write_matrix_csv(path: str | Path, values: np.ndarray) -> None:
    """One row per line, floats in shortest round-trip form."""
    values = np.atleast_2d(values)
    with open(path, "w", newline="") as f:
        for row in values:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError:
            raise DSPError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise DSPError(f"{path}: empty matrix")
    if len({len(r) for r in rows}) != 1:
        raise DSPError(f"{path}: rows have differing lengths")
    return np.array(rows, dtype=np.float64)


def _fmt(v) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))
