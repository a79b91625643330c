import struct

import numpy as np
import pytest

from voxprofile.audio_io import (AudioClip, read_audio, write_sphere,
                                 write_wav)
from voxprofile.errors import DecodeError


def test_riff_zero_signal(tmp_path):
    path = tmp_path / "zero.wav"
    write_wav(path, np.zeros(16000), 16000)
    clip = read_audio(path)
    assert len(clip) == 16000
    assert clip.sample_rate == 16000
    assert np.all(clip.samples == 0.0)


def test_riff_exact_scaling(tmp_path):
    # int16 value 16384 must decode to exactly 16384/32768 = 0.5
    path = tmp_path / "half.wav"
    write_wav(path, np.full(100, 0.5), 16000)
    clip = read_audio(path)
    assert np.all(clip.samples == 0.5)


def test_sphere_riff_round_trip_identical(tmp_path):
    t = np.arange(16000) / 16000
    signal = 0.8 * np.sin(2 * np.pi * 440.0 * t)
    write_wav(tmp_path / "s.wav", signal, 16000)
    write_sphere(tmp_path / "s.sph", signal, 16000)
    riff = read_audio(tmp_path / "s.wav")
    sphere = read_audio(tmp_path / "s.sph")
    assert riff.sample_rate == sphere.sample_rate == 16000
    assert np.max(np.abs(riff.samples - sphere.samples)) == 0.0


def test_sphere_big_endian_payload(tmp_path):
    samples = np.array([1000, -2000, 32767, -32768], dtype=np.int16)
    header = (b"NIST_1A\n   1024\n"
              b"sample_count -i 4\n"
              b"sample_rate -i 8000\n"
              b"channel_count -i 1\n"
              b"sample_n_bytes -i 2\n"
              b"sample_byte_format -s2 10\n"
              b"sample_coding -s3 pcm\n"
              b"end_head\n")
    path = tmp_path / "be.sph"
    path.write_bytes(header + b" " * (1024 - len(header))
                     + samples.astype(">i2").tobytes())
    clip = read_audio(path)
    assert np.array_equal(clip.samples * 32768.0, samples.astype(np.float64))


def _wav_bytes(codec=1, channels=1, bits=16, payload=b"\x00\x00" * 4, rate=16000):
    fmt = struct.pack("<IHHIIHH", 16, codec, channels, rate,
                      rate * channels * bits // 8, channels * bits // 8, bits)
    chunks = b"fmt " + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def test_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    path.write_bytes(_wav_bytes(channels=2))
    with pytest.raises(DecodeError, match="mono"):
        read_audio(path)


def test_rejects_mu_law_by_name(tmp_path):
    path = tmp_path / "ulaw.wav"
    path.write_bytes(_wav_bytes(codec=7))
    with pytest.raises(DecodeError, match="mu-law"):
        read_audio(path)


def test_rejects_24_bit(tmp_path):
    path = tmp_path / "deep.wav"
    path.write_bytes(_wav_bytes(bits=24))
    with pytest.raises(DecodeError, match="24-bit"):
        read_audio(path)


def test_truncated_payload_is_io_error(tmp_path):
    complete = _wav_bytes(payload=b"\x01\x00" * 100)
    path = tmp_path / "cut.wav"
    path.write_bytes(complete[:-50])
    with pytest.raises(OSError, match="truncated"):
        read_audio(path)


def test_unknown_container_named(tmp_path):
    path = tmp_path / "noise.bin"
    path.write_bytes(b"OGGS\x00\x00\x00\x00 not audio we support")
    with pytest.raises(DecodeError, match="RIFF/WAVE or NIST SPHERE"):
        read_audio(path)


def test_skips_extra_riff_chunks(tmp_path):
    payload = b"\x00\x40" * 8  # int16 16384 -> 0.5
    fmt = struct.pack("<IHHIIHH", 16, 1, 1, 16000, 32000, 2, 16)
    junk = b"LIST" + struct.pack("<I", 6) + b"junk\x00\x00"
    chunks = junk + b"fmt " + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    path = tmp_path / "chunky.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
    clip = read_audio(path)
    assert np.all(clip.samples == 0.5)


def test_clip_invariants():
    with pytest.raises(DecodeError):
        AudioClip(np.array([]), 16000)
    with pytest.raises(DecodeError):
        AudioClip(np.array([2.0]), 16000)
    with pytest.raises(DecodeError):
        AudioClip(np.array([0.0]), 0)


def test_sphere_truncated_header(tmp_path):
    path = tmp_path / "short.sph"
    path.write_bytes(b"NIST_1A\n   1024\nsample_rate -i 16000\n")
    with pytest.raises(OSError, match="truncated"):
        read_audio(path)
