"""Mono audio buffers: energy and SNR arithmetic, peak control, WAV I/O.

All arithmetic runs in float64 regardless of file encoding, so dB-level
identities hold to ~1e-12.  Files are RIFF/WAVE, mono, 16-bit integer PCM
or 32-bit float PCM; the sample rate is carried as data and never resampled.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PCM16_FULL_SCALE = 32768.0

_WAV_FORMAT_PCM = 1
_WAV_FORMAT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class AudioBuffer:
    """A mono waveform and its sample rate.  Samples are float64, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"mono required: got array of shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite (no NaN/Inf)")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


def energy(buf: AudioBuffer) -> float:
    """Sum of squared samples."""
    if len(buf) == 0:
        raise ValueError("empty signal")
    return float(np.dot(buf.samples, buf.samples))


def _check_compatible(a: AudioBuffer, b: AudioBuffer) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)} samples")
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate} Hz")


def snr_db(signal: AudioBuffer, interference: AudioBuffer) -> float:
    """10*log10 of signal energy over interference energy.

    Computed over the full buffer length, silent regions included.  A
    zero-energy signal yields -inf; zero-energy interference is an error
    because the ratio is undefined.
    """
    _check_compatible(signal, interference)
    e_i = energy(interference)
    if e_i == 0.0:
        raise ValueError("degenerate SNR (no interference)")
    e_s = energy(signal)
    if e_s == 0.0:
        return float("-inf")
    return 10.0 * math.log10(e_s / e_i)


def gain_for_snr(target: AudioBuffer, interference_sum: AudioBuffer, desired_snr_db: float) -> float:
    """Gain to apply to the interference so snr_db(target, g*interference) == desired_snr_db."""
    e_t = energy(target)
    e_i = energy(interference_sum)
    if e_t == 0.0 or e_i == 0.0:
        raise ValueError("zero-energy input: SNR gain is undefined")
    return math.sqrt(e_t / (e_i * 10.0 ** (desired_snr_db / 10.0)))


def peak_normalize(buf: AudioBuffer, peak_target: float = 0.99) -> tuple[AudioBuffer, float]:
    """Scale down so max |sample| == peak_target; returns (buffer, applied gain).

    Buffers already at or below the target (including all-zero buffers) are
    returned unchanged with gain 1.  A pure scaler: applying the returned
    gain to every stem of a mix preserves their relative levels.
    """
    if not 0.0 < peak_target <= 1.0:
        raise ValueError(f"peak target must be in (0, 1], got {peak_target}")
    if len(buf) == 0:
        raise ValueError("empty signal")
    peak = float(np.max(np.abs(buf.samples)))
    if peak <= peak_target:
        return buf, 1.0
    gain = peak_target / peak
    scaled = buf.samples * gain
    # rounding can overshoot by an ulp; back the gain off so the op is idempotent
    while float(np.max(np.abs(scaled))) > peak_target:
        gain = float(np.nextafter(gain, 0.0))
        scaled = buf.samples * gain
    return AudioBuffer(scaled, buf.sample_rate), gain


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a mono pcm16 or float32 RIFF/WAVE file.

    16-bit samples map to [-1, 1) via division by 32768; float32 samples are
    taken verbatim.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"not a RIFF/WAVE file: {path}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise ValueError(f"missing fmt/data chunk: {path}")
    if len(fmt) < 16:
        raise ValueError(f"malformed fmt chunk: {path}")
    audio_format, channels, rate, _byte_rate, _block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels != 1:
        raise ValueError(f"mono required: {path} has {channels} channels")

    if audio_format == _WAV_FORMAT_PCM and bits == 16:
        ints = np.frombuffer(data, dtype="<i2")
        samples = ints.astype(np.float64) / PCM16_FULL_SCALE
    elif audio_format == _WAV_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(
            f"unsupported encoding in {path}: format {audio_format}, {bits}-bit "
            "(mono pcm16 or float32 required)"
        )
    return AudioBuffer(samples, rate)


def write_wav(path: str | Path, buf: AudioBuffer, encoding: str = "float32") -> None:
    """Write a mono RIFF/WAVE file.

    pcm16 rounds to the nearest 16-bit code and saturates at full scale
    (so +1.0 stores as 32767); float32 round-trips through read_wav
    bit-exactly.
    """
    if encoding == "pcm16":
        codes = np.clip(np.rint(buf.samples * PCM16_FULL_SCALE), -32768, 32767)
        payload = codes.astype("<i2").tobytes()
        audio_format, bits = _WAV_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = buf.samples.astype("<f4").tobytes()
        audio_format, bits = _WAV_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unsupported encoding: {encoding!r} (use 'pcm16' or 'float32')")

    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        1,
        buf.sample_rate,
        buf.sample_rate * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(header + payload)
