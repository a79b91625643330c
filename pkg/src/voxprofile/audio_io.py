"""Readers and writers for the two audio containers the toolkit accepts.

Supported on disk:

* RIFF/WAVE, PCM16 little-endian, mono.
* NIST SPHERE ("NIST_1A" magic, 1024-byte ASCII header), PCM16 mono,
  either byte order (``sample_byte_format`` "01" or "10"; "01" assumed
  when the header omits it).

Decoded samples are scaled by 1/32768 so they live in [-1, 1]. Stereo,
compressed codecs and non-16-bit payloads are rejected with a
:class:`~voxprofile.errors.DecodeError` naming the offending format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError

_INT16_SCALE = 32768.0

# RIFF fmt codes we can name in error messages
_WAVE_CODECS = {
    0x0000: "unknown",
    0x0001: "PCM",
    0x0003: "IEEE float",
    0x0006: "a-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0xFFFE: "extensible",
}


@dataclass(frozen=True)
class AudioClip:
    """Decoded mono signal. ``samples`` is a float array in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DecodeError("audio clip must be a non-empty 1-D signal")
        if self.sample_rate <= 0:
            raise DecodeError(f"sample rate must be positive, got {self.sample_rate}")
        if np.max(np.abs(samples)) > 1.0:
            raise DecodeError("decoded samples exceed [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_audio(path) -> AudioClip:
    """Decode a RIFF/WAVE or NIST SPHERE file into an :class:`AudioClip`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        fh.seek(0)
        if magic[:4] == b"RIFF":
            return _read_riff(fh, path)
        if magic[:7] == b"NIST_1A":
            return _read_sphere(fh, path)
    raise DecodeError(
        f"{path}: unsupported container (magic {magic[:7]!r}); "
        "expected RIFF/WAVE or NIST SPHERE"
    )


def _read_riff(fh, path) -> AudioClip:
    header = fh.read(12)
    if len(header) < 12 or header[8:12] != b"WAVE":
        raise DecodeError(f"{path}: RIFF file is not a WAVE file")

    fmt = None
    while True:
        chunk_header = fh.read(8)
        if len(chunk_header) == 0:
            raise DecodeError(f"{path}: WAVE file has no data chunk")
        if len(chunk_header) < 8:
            raise OSError(f"{path}: truncated chunk header")
        chunk_id, chunk_size = struct.unpack("<4sI", chunk_header)
        if chunk_id == b"fmt ":
            body = fh.read(chunk_size)
            if len(body) < 16:
                raise OSError(f"{path}: truncated fmt chunk")
            codec, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
            if codec != 0x0001:
                name = _WAVE_CODECS.get(codec, f"0x{codec:04x}")
                raise DecodeError(
                    f"{path}: WAVE codec {name} not supported; only PCM16"
                )
            if bits != 16:
                raise DecodeError(f"{path}: {bits}-bit PCM not supported; only PCM16")
            if channels != 1:
                raise DecodeError(f"{path}: {channels} channels; mono required")
            fmt = rate
        elif chunk_id == b"data":
            if fmt is None:
                raise DecodeError(f"{path}: data chunk precedes fmt chunk")
            payload = fh.read(chunk_size)
            if len(payload) < chunk_size:
                raise OSError(
                    f"{path}: truncated data payload "
                    f"({len(payload)} of {chunk_size} bytes)"
                )
            samples = np.frombuffer(payload, dtype="<i2").astype(np.float64)
            return AudioClip(samples / _INT16_SCALE, fmt)
        else:
            # skip LIST/fact/etc; chunks are word-aligned
            fh.seek(chunk_size + (chunk_size & 1), 1)


def _read_sphere(fh, path) -> AudioClip:
    raw = fh.read(1024)
    if len(raw) < 1024:
        raise OSError(f"{path}: truncated SPHERE header")
    try:
        header_text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"{path}: SPHERE header is not ASCII") from exc

    fields = {}
    for line in header_text.splitlines():
        line = line.strip()
        if not line or line == "end_head":
            if line == "end_head":
                break
            continue
        parts = line.split(None, 2)
        if len(parts) == 3 and parts[1].startswith("-"):
            key, kind, value = parts
            fields[key] = int(value) if kind == "-i" else value

    coding = fields.get("sample_coding", "pcm")
    if not str(coding).startswith("pcm"):
        raise DecodeError(f"{path}: SPHERE sample_coding {coding!r} not supported")
    if fields.get("channel_count", 1) != 1:
        raise DecodeError(f"{path}: {fields['channel_count']} channels; mono required")
    if fields.get("sample_n_bytes", 2) != 2:
        raise DecodeError(
            f"{path}: {fields['sample_n_bytes']}-byte samples not supported; only PCM16"
        )
    if "sample_rate" not in fields:
        raise DecodeError(f"{path}: SPHERE header missing sample_rate")

    byte_format = str(fields.get("sample_byte_format", "01"))
    if byte_format == "01":
        dtype = "<i2"
    elif byte_format == "10":
        dtype = ">i2"
    else:
        raise DecodeError(f"{path}: SPHERE sample_byte_format {byte_format!r} unknown")

    count = fields.get("sample_count")
    payload = fh.read()
    if count is not None and len(payload) < 2 * count:
        raise OSError(
            f"{path}: truncated SPHERE payload "
            f"({len(payload)} of {2 * count} bytes)"
        )
    if count is not None:
        payload = payload[: 2 * count]
    samples = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return AudioClip(samples / _INT16_SCALE, int(fields["sample_rate"]))


def _quantize(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(samples * _INT16_SCALE), -32768, 32767).astype("<i2")


def write_wav(path, samples, sample_rate: int) -> None:
    """Write a mono PCM16 little-endian RIFF/WAVE file."""
    data = _quantize(samples).tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(data)))
        fh.write(b"WAVE")
        fh.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                                       sample_rate * 2, 2, 16))
        fh.write(b"data" + struct.pack("<I", len(data)))
        fh.write(data)


def write_sphere(path, samples, sample_rate: int) -> None:
    """Write a mono PCM16 NIST SPHERE file (little-endian payload)."""
    quantized = _quantize(samples)
    header_lines = [
        "NIST_1A",
        "   1024",
        f"sample_count -i {len(quantized)}",
        f"sample_rate -i {sample_rate}",
        "channel_count -i 1",
        "sample_n_bytes -i 2",
        "sample_byte_format -s2 01",
        "sample_coding -s3 pcm",
        "end_head",
    ]
    header = "\n".join(header_lines).encode("ascii") + b"\n"
    header = header + b" " * (1024 - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantized.tobytes())
