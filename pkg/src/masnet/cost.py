"""Analytical fused multiply-accumulate accounting and receptive fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .model import CONV2D

DEFAULT_FRAME_RATE = 128.0
FREQ_BINS = 129

# Published FMA/s (millions) for the sequential registry models. masnet-9 is
# listed at 224M but its nine layers come to ~194M; see KNOWN_DISCREPANCIES.
PUBLISHED_MFMA = {
    "llasnet-8": 2240, "llasnet-15": 5199,
    "masnet-9": 224, "masnet-16": 404, "masnet-22": 584, "masnet-28": 765, "masnet-34": 945,
}

KNOWN_DISCREPANCIES = {
    "masnet-9": ("published figure 224M matches ten layers (including the 5x5/32x1 block); "
                 "the nine-layer configuration counts ~194M"),
}


def fma_per_bin_frame(layer):
    """Multiply-accumulates one layer spends per time-frequency cell."""
    if layer.kind == CONV2D:
        return layer.out_channels * layer.in_channels * layer.kernel_t * layer.kernel_f
    return (layer.in_channels * layer.kernel_t * layer.kernel_f
            + layer.out_channels * layer.in_channels)


@dataclass
class LayerCost:
    index: int
    kind: str
    kernel: tuple
    dilation: tuple
    fma_per_bin_frame: int
    fma_per_frame: int
    fma_per_second: float


@dataclass
class FmaReport:
    model: str
    per_layer: list
    total_per_frame: int
    total_per_second: float
    frame_rate_hz: float
    freq_bins: int
    notes: list = field(default_factory=list)

    @property
    def total_per_bin_frame(self):
        return sum(l.fma_per_bin_frame for l in self.per_layer)

    def rows(self):
        """Tabular rows: index, kind, kernel, dilation, FMA/bin-frame, FMA/frame, FMA/s."""
        for l in self.per_layer:
            yield (l.index, l.kind, "%dx%d" % l.kernel, "%dx%d" % l.dilation,
                   l.fma_per_bin_frame, l.fma_per_frame, l.fma_per_second)

    def to_dict(self):
        return {
            "model": self.model,
            "freq_bins": self.freq_bins,
            "frame_rate_hz": self.frame_rate_hz,
            "total_per_bin_frame": self.total_per_bin_frame,
            "total_per_frame": self.total_per_frame,
            "total_per_second": self.total_per_second,
            "layers": [l.__dict__ for l in self.per_layer],
            "notes": list(self.notes),
        }


def analyze(spec, freq_bins=FREQ_BINS, frame_rate_hz=DEFAULT_FRAME_RATE):
    per_layer = []
    for i, layer in enumerate(spec.layers):
        bf = fma_per_bin_frame(layer)
        per_frame = bf * freq_bins
        per_layer.append(LayerCost(i + 1, layer.kind, (layer.kernel_t, layer.kernel_f),
                                   (layer.dilation_t, layer.dilation_f), bf, per_frame,
                                   per_frame * frame_rate_hz))
    total = sum(l.fma_per_frame for l in per_layer)
    notes = []
    base = spec.name.replace("masnet-r-", "masnet-")
    if base in KNOWN_DISCREPANCIES:
        notes.append(f"{base}: {KNOWN_DISCREPANCIES[base]}")
    return FmaReport(spec.name, per_layer, total, total * frame_rate_hz, frame_rate_hz,
                     freq_bins, notes)


@dataclass
class ReceptiveField:
    time_frames: int
    freq_bins: int


def receptive_field(spec, freq_bins=None):
    """Input extent visible to one output cell; frequency extent capped at ``freq_bins``."""
    cap = spec.freq_bins if freq_bins is None else freq_bins
    t = 1 + sum((l.kernel_t - 1) * l.dilation_t for l in spec.layers)
    f = 1 + sum((l.kernel_f - 1) * l.dilation_f for l in spec.layers)
    return ReceptiveField(t, min(f, cap))


def counted_forward(net, x):
    """Batch inference with an exact multiply-accumulate tally."""
    counter = engine.FmaCounter()
    mask = engine.forward_batch(net, x, counter) if net.spec.layers else None
    return mask, counter.count


def counted_stream(net, x):
    """Stream the frames of ``x`` one by one with the same tally."""
    counter = engine.FmaCounter()
    mask = engine.forward_stream(net, x, counter=counter)
    return mask, counter.count


def measure_time_receptive_field(net, n_frames=None, seed=0, probe_scale=100.0):
    """Empirical temporal receptive field.

    Perturbs input frame ``t - d`` for growing lags ``d`` and reports one plus
    the largest lag that still changes output frame ``t``.
    """
    rf = receptive_field(net.spec).time_frames
    n_frames = n_frames or rf + 8
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, n_frames, net.spec.freq_bins)).astype(net.dtype)
    t = n_frames - 1
    base = engine.forward_batch(net, x).to_channels(net.dtype)[:, t]
    largest = -1
    for lag in range(0, min(n_frames, rf + 2)):
        y = x.copy()
        y[:, t - lag] += probe_scale
        out = engine.forward_batch(net, y).to_channels(net.dtype)[:, t]
        if not np.array_equal(out, base):
            largest = lag
    return largest + 1
