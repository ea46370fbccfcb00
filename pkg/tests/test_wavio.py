import struct

import numpy as np
import pytest

from masnet import wavio
from masnet.wavio import WavError


def header(rate=16000, channels=1, bits=16, fmt_code=1, data=b"\0\0"):
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * channels * bits // 8,
                      channels * bits // 8, bits)
    return (b"RIFF" + struct.pack("<I", 4 + 24 + 8 + len(data)) + b"WAVE"
            + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data)


def test_round_trip_bit_exact(tmp_path):
    pcm = np.random.default_rng(0).integers(-32768, 32768, 5000).astype(np.int16)
    path = tmp_path / "a.wav"
    path.write_bytes(wavio.encode_wav(pcm))
    w = wavio.read_wav(path)
    assert w.sample_rate_hz == 16000
    wavio.write_wav(tmp_path / "b.wav", w)
    assert (tmp_path / "b.wav").read_bytes() == path.read_bytes()


def test_header_fields():
    data = wavio.encode_wav(np.array([1, -2], dtype=np.int16))
    assert data[:4] == b"RIFF" and data[8:16] == b"WAVEfmt "
    assert struct.unpack("<HHIIHH", data[20:36]) == (1, 1, 16000, 32000, 2, 16)
    assert wavio.decode_wav(data).tolist() == [1, -2]


@pytest.mark.parametrize("kwargs,msg", [({"rate": 44100}, "44100"), ({"channels": 2}, "mono"),
                                        ({"bits": 24}, "16-bit"), ({"fmt_code": 3}, "16-bit"),
                                        ({"data": b""}, "empty"), ({"data": b"\0"}, "odd")])
def test_rejections(kwargs, msg):
    with pytest.raises(WavError, match=msg):
        wavio.decode_wav(header(**kwargs))


def test_not_riff():
    with pytest.raises(WavError):
        wavio.decode_wav(b"RIFX" + b"\0" * 40)


def test_skips_unknown_chunks():
    base = header(data=b"\x01\x00")
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\0"
    data = base[:36] + extra + base[36:]
    assert wavio.decode_wav(data).tolist() == [1]


def test_quantize_rounding_and_clamp():
    x = np.array([0.5 / 32768, -0.5 / 32768, 1.0, -1.0, 2.0, 1.4 / 32768])
    assert wavio.quantize(x).tolist() == [1, -1, 32767, -32768, 32767, 1]


def test_float_scale():
    assert wavio.to_float(np.array([-32768, 16384], dtype=np.int16)).tolist() == [-1.0, 0.5]
