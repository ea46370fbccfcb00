"""Whole-waveform signal-to-noise ratio."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

SNR_CAP_DB = 120.0


@dataclass
class SnrResult:
    snr_db: float
    clipped: bool = False


def _samples(w):
    return np.asarray(getattr(w, "samples", w), dtype=np.float64)


def snr_db(clean, estimate):
    """10 log10 of clean energy over residual energy, capped at +120 dB.

    Computed over the entire waveform (not segmental).
    """
    c, e = _samples(clean), _samples(estimate)
    if c.shape != e.shape:
        raise InvalidArgument(f"length mismatch: {c.shape} vs {e.shape}")
    if c.size == 0:
        raise InvalidArgument("empty waveform")
    signal = float(np.dot(c, c))
    if signal == 0.0:
        raise InvalidArgument("clean reference is all zeros")
    resid = c - e
    noise = float(np.dot(resid, resid))
    if noise < 1e-12 * signal:
        return SnrResult(SNR_CAP_DB, True)
    return SnrResult(min(10.0 * np.log10(signal / noise), SNR_CAP_DB), False)


def mean_snr_db(pairs):
    """Unweighted mean of per-utterance SNR over ``(clean, estimate)`` pairs."""
    values = [snr_db(c, e).snr_db for c, e in pairs]
    if not values:
        raise InvalidArgument("no utterances to average")
    return float(np.mean(values))
