"""Mono 16-bit PCM WAV at 16 kHz, bit-exact read/write."""

import struct

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .errors import InvalidArgument


class WavError(InvalidArgument):
    pass


def _chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(data):
    """Parse RIFF/WAVE bytes into an int16 sample array."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    fmt = pcm = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data" and pcm is None:
            pcm = body
    if fmt is None or len(fmt) < 16:
        raise WavError("missing fmt chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format != 1 or bits != 16:
        raise WavError(f"only 16-bit PCM is supported (format {audio_format}, {bits} bits)")
    if channels != 1:
        raise WavError(f"only mono audio is supported, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise WavError(f"sample rate must be {SAMPLE_RATE} Hz, got {rate} Hz")
    if pcm is None:
        raise WavError("missing data chunk")
    if len(pcm) == 0:
        raise WavError("data chunk is empty")
    if len(pcm) % 2:
        raise WavError("data chunk has an odd byte count")
    return np.frombuffer(pcm, dtype="<i2").astype(np.int16)


def encode_wav(pcm):
    pcm = np.asarray(pcm, dtype="<i2")
    body = pcm.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16)
    return (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(body)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(body)) + body)


def to_float(pcm):
    return np.asarray(pcm, dtype=np.float64) / 32768.0


def quantize(x):
    """Float samples to int16: scale by 32768, round half away from zero, clamp."""
    y = np.asarray(x, dtype=np.float64) * 32768.0
    y = np.sign(y) * np.floor(np.abs(y) + 0.5)
    return np.clip(y, -32768, 32767).astype(np.int16)


def read_wav(path):
    with open(path, "rb") as fh:
        return Waveform(to_float(decode_wav(fh.read())))


def write_wav(path, w):
    samples = getattr(w, "samples", w)
    with open(path, "wb") as fh:
        fh.write(encode_wav(quantize(samples)))
