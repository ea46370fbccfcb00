"""STFT analysis / weighted overlap-add synthesis.

Frame ``t`` covers samples ``[t*hop - hop, t*hop - hop + n_fft)`` of the
input, i.e. the waveform is preceded by one hop of zeros so that frame 0 is
centred on sample 0 and every sample sits under at least one non-zero
window tap. The tail is zero-padded to complete the last frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

SAMPLE_RATE = 16000
N_FFT = 256
HOP = 128

# Samples whose squared-window sum is below this are synthesised as 0.
WSUM_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidArgument("waveform must be mono (1-D)")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise InvalidArgument(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgument("waveform contains NaN or Inf")

    def __len__(self):
        return len(self.samples)


@dataclass
class ComplexSpectrogram:
    """Complex T x F grid stored as separate real and imaginary planes."""

    real: np.ndarray
    imag: np.ndarray
    hop: int = HOP
    window: int = N_FFT

    def __post_init__(self):
        self.real = np.asarray(self.real)
        self.imag = np.asarray(self.imag)
        if self.real.ndim != 2 or self.real.shape != self.imag.shape:
            raise InvalidArgument(
                f"real/imag must be equal 2-D grids, got {self.real.shape} and {self.imag.shape}")
        if self.real.shape[1] != self.window // 2 + 1:
            raise InvalidArgument(
                f"expected {self.window // 2 + 1} frequency bins, got {self.real.shape[1]}")

    @property
    def shape(self):
        return self.real.shape

    @property
    def T(self):
        return self.real.shape[0]

    @property
    def F(self):
        return self.real.shape[1]

    def to_channels(self, dtype=np.float32):
        """Stack as a (2, T, F) array: channel 0 real, channel 1 imaginary."""
        return np.stack([self.real, self.imag]).astype(dtype, copy=False)

    @classmethod
    def from_channels(cls, x, hop=HOP, window=None):
        x = np.asarray(x)
        if window is None:
            window = 2 * (x.shape[-1] - 1)
        return cls(x[0], x[1], hop=hop, window=window)

    def to_complex(self):
        return self.real.astype(np.float64) + 1j * self.imag.astype(np.float64)


def hann_window(size):
    """Periodic Hann window; ``w[n] + w[n + size/2] == 1`` for even ``size``."""
    if size < 2:
        raise InvalidArgument(f"window size must be >= 2, got {size}")
    n = np.arange(size)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / size))
    if size % 2 == 0:
        # mirror the first half so overlapping halves sum to exactly 1.0
        half = size // 2
        w[half:] = 1.0 - w[:half]
    return w


def num_frames(n_samples, hop=HOP):
    return -(-n_samples // hop) + 1


def frame_signal(x, n_fft=N_FFT, hop=HOP):
    """Slice a 1-D signal into overlapping (T, n_fft) frames using the framing convention above."""
    x = np.asarray(x, dtype=np.float64)
    T = num_frames(len(x), hop)
    padded = np.zeros((T - 1) * hop + n_fft)
    padded[hop:hop + len(x)] = x
    idx = np.arange(T)[:, None] * hop + np.arange(n_fft)[None, :]
    return padded[idx]


def stft(w, n_fft=N_FFT, hop=HOP):
    if not isinstance(w, Waveform):
        w = Waveform(w)
    if len(w) == 0:
        raise InvalidArgument("cannot analyse an empty waveform")
    frames = frame_signal(w.samples, n_fft, hop) * hann_window(n_fft)
    spec = np.fft.rfft(frames, axis=-1)
    return ComplexSpectrogram(spec.real.copy(), spec.imag.copy(), hop=hop, window=n_fft)


def synthesis_frames(s):
    """Inverse-DFT each frame and apply the synthesis window: (T, n_fft) float64."""
    z = s.real.astype(np.float64) + 1j * s.imag.astype(np.float64)
    return np.fft.irfft(z, n=s.window, axis=-1) * hann_window(s.window)


def window_power_sum(T, n_fft=N_FFT, hop=HOP):
    """Per-sample sum of squared synthesis windows over the padded signal."""
    w2 = hann_window(n_fft) ** 2
    out = np.zeros((T - 1) * hop + n_fft)
    for t in range(T):
        out[t * hop:t * hop + n_fft] += w2
    return out


def istft(s, length_hint=None):
    if not isinstance(s, ComplexSpectrogram):
        raise InvalidArgument("istft expects a ComplexSpectrogram")
    n_fft, hop, T = s.window, s.hop, s.T
    frames = synthesis_frames(s)
    acc = np.zeros((T - 1) * hop + n_fft)
    for t in range(T):
        acc[t * hop:t * hop + n_fft] += frames[t]
    wsum = window_power_sum(T, n_fft, hop)
    out = np.where(wsum >= WSUM_FLOOR, acc / np.maximum(wsum, WSUM_FLOOR), 0.0)
    out = out[hop:]
    if length_hint is not None:
        out = out[:length_hint]
    return Waveform(out)


class StreamingSynth:
    """Incremental counterpart of :func:`istft`.

    Push one spectrogram frame at a time; finished samples come out as soon
    as no later frame can overlap them. Output is bit-identical to ``istft``
    on the stacked frames.
    """

    def __init__(self, n_fft=N_FFT, hop=HOP):
        self.n_fft, self.hop = n_fft, hop
        self.window = hann_window(n_fft)
        self._w2 = self.window ** 2
        self._acc = np.zeros(n_fft)
        self._wsum = np.zeros(n_fft)
        self._skip = hop  # leading pad samples still to discard

    def _emit(self, n):
        acc, wsum = self._acc[:n], self._wsum[:n]
        out = np.where(wsum >= WSUM_FLOOR, acc / np.maximum(wsum, WSUM_FLOOR), 0.0)
        self._acc = np.concatenate([self._acc[n:], np.zeros(n)])
        self._wsum = np.concatenate([self._wsum[n:], np.zeros(n)])
        drop = min(self._skip, n)
        self._skip -= drop
        return out[drop:]

    def push(self, real, imag):
        s = ComplexSpectrogram(np.asarray(real)[None, :], np.asarray(imag)[None, :],
                               hop=self.hop, window=self.n_fft)
        self._acc = self._acc + synthesis_frames(s)[0]
        self._wsum = self._wsum + self._w2
        return self._emit(self.hop)

    def flush(self):
        return self._emit(self.n_fft - self.hop)


class StreamingAnalysis:
    """Incremental counterpart of :func:`stft`: feed samples, receive frames."""

    def __init__(self, n_fft=N_FFT, hop=HOP):
        self.n_fft, self.hop = n_fft, hop
        self.window = hann_window(n_fft)
        self._buf = np.zeros(hop)  # the leading pad
        self._seen = 0
        self._emitted = 0

    def _frames(self, final):
        out = []
        want = num_frames(self._seen, self.hop) if final and self._seen else 0
        while len(self._buf) >= self.n_fft or self._emitted < want:
            frame = np.zeros(self.n_fft)
            chunk = self._buf[:self.n_fft]
            frame[:len(chunk)] = chunk
            out.append(frame)
            self._buf = self._buf[self.hop:]
            self._emitted += 1
        if not out:
            return np.zeros((0, self.n_fft // 2 + 1), dtype=complex)
        return np.fft.rfft(np.stack(out) * self.window, axis=-1)

    def push(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        self._seen += len(samples)
        self._buf = np.concatenate([self._buf, samples])
        return self._frames(final=False)

    def flush(self):
        return self._frames(final=True)
