"""Supervised training: spectrogram MSE, backprop through the network, Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, layers as L
from .dsp import ComplexSpectrogram, Waveform
from .errors import InvalidArgument, InvalidState, TrainingDiverged
from .model import BN_EPS, RESIDUAL_MAS_BLOCK
from .wavio import read_wav


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 200
    bn_epsilon: float = BN_EPS
    bn_momentum: float = 0.1
    max_samples_per_utterance: int = 3 * 16384
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise InvalidArgument("Adam betas must lie in (0, 1)")
        if self.learning_rate < 0:
            raise InvalidArgument("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgument("batch_size and epochs must be positive")


def loss_mse(xhat, x):
    """Spectrogram MSE over real and imaginary parts, averaged over T*F."""
    if xhat.shape != x.shape:
        raise InvalidArgument(f"shape mismatch: {xhat.shape} vs {x.shape}")
    dr = np.asarray(xhat.real, np.float64) - np.asarray(x.real, np.float64)
    di = np.asarray(xhat.imag, np.float64) - np.asarray(x.imag, np.float64)
    T, F = x.shape
    return float((dr ** 2 + di ** 2).sum() / (T * F))


# -- network forward / backward ---------------------------------------------

@dataclass
class ForwardCache:
    net_id: int
    generation: int
    layers: list
    input_shape: tuple


def _bn(x, p, prefix, cfg, frozen, update):
    gamma, beta = p[f"{prefix}_gamma"], p[f"{prefix}_beta"]
    rm, rv = p[f"{prefix}_running_mean"], p[f"{prefix}_running_var"]
    if frozen:
        return L.batchnorm_forward(x, gamma, beta, cfg.bn_epsilon, running=(rm, rv))
    out, cache = L.batchnorm_forward(x, gamma, beta, cfg.bn_epsilon)
    if update:
        mu, var = cache[4], cache[5]
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        m = cfg.bn_momentum
        rm[...] = (1 - m) * rm + m * mu
        rv[...] = (1 - m) * rv + m * unbiased
    return out, cache


def forward_train(net, x, cfg=None, frozen_stats=False, update_stats=True):
    """Forward pass keeping every intermediate needed by :func:`backward`.

    ``x`` is a (B, 2, T, F) batch of noisy spectrogram channels. Batchnorm
    uses batch statistics and updates the running estimates, unless
    ``frozen_stats`` is set, in which case the running estimates are used
    (matching eval-mode inference).
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] == 0:
        raise InvalidArgument(f"expected a non-empty (B, 2, T, F) batch, got {x.shape}")
    if x.shape[1] != net.spec.input_channels or x.shape[3] != net.spec.freq_bins:
        raise InvalidArgument(f"batch shape {x.shape} does not fit network {net.spec.name}")
    h = x.astype(net.dtype, copy=False)
    caches = []
    for layer, p in zip(net.spec.layers, net.params):
        c = {}
        if layer.is_mas:
            block_in = h
            h, c["dw"] = L.depthwise_forward(h, p["dw_weight"], layer.dilation_t, layer.dilation_f)
            h, c["dw_bn"] = _bn(h, p, "dw_bn", cfg, frozen_stats, update_stats)
            h, c["dw_relu"] = L.relu_forward(h)
            h, c["pw"] = L.conv_forward(h, p["pw_weight"])
            h, c["pw_bn"] = _bn(h, p, "pw_bn", cfg, frozen_stats, update_stats)
            h, c["pw_relu"] = L.relu_forward(h)
            if layer.kind == RESIDUAL_MAS_BLOCK:
                h = h + block_in
        else:
            bias = p.get("bias")
            h, c["conv"] = L.conv_forward(h, p["weight"], layer.dilation_t, layer.dilation_f, bias)
            if layer.has_batchnorm:
                h, c["bn"] = _bn(h, p, "bn", cfg, frozen_stats, update_stats)
            if layer.activation == "relu":
                h, c["relu"] = L.relu_forward(h)
        caches.append(c)
    cache = ForwardCache(id(net), getattr(net, "generation", 0), caches, x.shape)
    return h, cache


def backward(net, cache, dmask):
    """Parameter gradients given dL/dmask; returns one {name: grad} dict per layer."""
    if cache.net_id != id(net) or cache.generation != getattr(net, "generation", 0):
        raise InvalidState("forward cache does not belong to the current network parameters")
    if dmask.shape[0] != cache.input_shape[0] or dmask.shape[2:] != cache.input_shape[2:]:
        raise InvalidState("gradient shape does not match the cached forward pass")
    grads = [None] * len(net.spec.layers)
    g = dmask
    for k in range(len(net.spec.layers) - 1, -1, -1):
        layer, c = net.spec.layers[k], cache.layers[k]
        out = {}
        if layer.is_mas:
            g_bypass = g if layer.kind == RESIDUAL_MAS_BLOCK else None
            g = L.relu_backward(g, c["pw_relu"])
            g, out["pw_bn_gamma"], out["pw_bn_beta"] = L.batchnorm_backward(g, c["pw_bn"])
            g, out["pw_weight"], _ = L.conv_backward(g, c["pw"])
            g = L.relu_backward(g, c["dw_relu"])
            g, out["dw_bn_gamma"], out["dw_bn_beta"] = L.batchnorm_backward(g, c["dw_bn"])
            g, out["dw_weight"] = L.depthwise_backward(g, c["dw"])
            if g_bypass is not None:
                g = g + g_bypass
        else:
            if "relu" in c:
                g = L.relu_backward(g, c["relu"])
            if "bn" in c:
                g, out["bn_gamma"], out["bn_beta"] = L.batchnorm_backward(g, c["bn"])
            g, out["weight"], db = L.conv_backward(g, c["conv"])
            if db is not None:
                out["bias"] = db
        grads[k] = {name: out[name] for name in net.params[k] if name in out}
    return grads


def masked_loss_and_grad(mask, noisy, clean):
    """Loss of ``mask * noisy`` against ``clean`` and its gradient w.r.t. the mask."""
    denoised, mc = L.complex_mask_forward(mask, noisy)
    loss, diff = L.mse_forward(denoised, clean)
    return loss, L.complex_mask_backward(L.mse_backward(diff), mc)


# -- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state, cfg):
    """In-place Adam update with bias correction."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgument("params, grads and optimiser state disagree in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)).astype(p.dtype)


def _flat_trainable(net, grads=None):
    ps, gs = [], []
    for k, p in enumerate(net.params):
        for name, v in p.items():
            if "running" in name:
                continue
            ps.append(v)
            if grads is not None:
                gs.append(grads[k][name])
    return ps, gs


def train_step(net, noisy, clean, adam, cfg):
    """One optimiser step on a (B, 2, T, F) batch; returns the batch loss."""
    mask, cache = forward_train(net, noisy, cfg)
    loss, dmask = masked_loss_and_grad(mask, noisy, clean)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss}")
    grads = backward(net, cache, dmask)
    ps, gs = _flat_trainable(net, grads)
    adam_step(ps, gs, adam, cfg)
    net.generation = getattr(net, "generation", 0) + 1
    return loss


def calibrate_batchnorm(net, x, cfg=None):
    """Set every running mean/variance to the statistics seen on batch ``x``."""
    cfg = cfg or TrainConfig()
    one = TrainConfig(**{**cfg.__dict__, "bn_momentum": 1.0})
    forward_train(net, x, one)
    return net


# -- data --------------------------------------------------------------------

def fit_length(x, n):
    """Truncate at the end, or zero-pad equally at both ends, to ``n`` samples."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) >= n:
        return x[:n]
    extra = n - len(x)
    left = extra // 2
    return np.concatenate([np.zeros(left), x, np.zeros(extra - left)])


def spectrogram_batch(waves, n_fft):
    """Stack STFTs of equal-length waveforms into a (B, 2, T, F) array."""
    out = []
    for w in waves:
        s = dsp.stft(w, n_fft, n_fft // 2)
        out.append(np.stack([s.real, s.imag]))
    return np.stack(out)


def prepare_pairs(pairs, n_samples, n_fft, dtype=np.float32):
    if not pairs:
        raise InvalidArgument("dataset is empty")
    noisy = [fit_length(_samples(n), n_samples) for n, _ in pairs]
    clean = [fit_length(_samples(c), n_samples) for _, c in pairs]
    return (spectrogram_batch(noisy, n_fft).astype(dtype),
            spectrogram_batch(clean, n_fft).astype(dtype))


def _samples(w):
    if isinstance(w, Waveform):
        return w.samples
    return Waveform(w).samples


def synthetic_pairs(n, n_samples=4096, snr_range=(0.0, 10.0), seed=0, peak=0.9):
    """Tones and chirps in white Gaussian noise at a uniformly drawn SNR.

    Each pair is scaled so the noisy mixture peaks at ``peak``. Returns a
    list of ``(noisy, clean)`` :class:`Waveform` pairs.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / dsp.SAMPLE_RATE
    pairs = []
    for _ in range(n):
        clean = np.zeros(n_samples)
        for _ in range(rng.integers(1, 4)):
            f0 = rng.uniform(200.0, 3500.0)
            amp = rng.uniform(0.1, 0.4)
            if rng.random() < 0.3:
                f1 = f0 * rng.uniform(0.7, 1.4)
                phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t ** 2 / t[-1])
            else:
                phase = 2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)
            clean += amp * np.sin(phase)
        noise = rng.normal(size=n_samples)
        snr = rng.uniform(*snr_range)
        noise *= np.sqrt((clean ** 2).sum() / (noise ** 2).sum() / 10 ** (snr / 10))
        noisy = clean + noise
        g = peak / np.abs(noisy).max()
        pairs.append((Waveform(g * noisy), Waveform(g * clean)))
    return pairs


# -- loop ----------------------------------------------------------------------

@dataclass
class FitResult:
    network: object
    history: list  # (epoch, train_loss, val_loss); epoch 0 is the untrained network
    best_epoch: int
    steps: int


def evaluate_loss(net, noisy, clean, cfg, batch_size=16):
    """Mean validation loss with inference-mode batchnorm."""
    total, n = 0.0, noisy.shape[0]
    for s in range(0, n, batch_size):
        mask, _ = forward_train(net, noisy[s:s + batch_size], cfg, frozen_stats=True)
        loss, _ = masked_loss_and_grad(mask, noisy[s:s + batch_size], clean[s:s + batch_size])
        total += loss * min(batch_size, n - s)
    return total / n


def fit(net, dataset, cfg, validation, log=None):
    """Train with Adam; return the parameters with the lowest validation loss."""
    if not dataset or not validation:
        raise InvalidArgument("training and validation sets must be non-empty")
    n_fft = net.spec.n_fft
    tr_noisy, tr_clean = prepare_pairs(dataset, cfg.max_samples_per_utterance, n_fft, net.dtype)
    va_noisy, va_clean = prepare_pairs(validation, cfg.max_samples_per_utterance, n_fft, net.dtype)
    net.mode = "train"
    adam = AdamState()
    history = [(0, evaluate_loss(net, tr_noisy, tr_clean, cfg),
                evaluate_loss(net, va_noisy, va_clean, cfg))]
    best, best_loss, best_epoch = net.copy(), history[0][2], 0
    steps = 0
    n = tr_noisy.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            losses.append(train_step(net, tr_noisy[idx], tr_clean[idx], adam, cfg))
            steps += 1
        val = evaluate_loss(net, va_noisy, va_clean, cfg)
        if not math.isfinite(val):
            raise TrainingDiverged(f"validation loss became {val} at epoch {epoch}")
        history.append((epoch, float(np.mean(losses)), val))
        if log is not None:
            log(epoch, history[-1][1], val)
        if val < best_loss:
            best, best_loss, best_epoch = net.copy(), val, epoch
    best.mode = "eval"
    net.mode = "eval"
    return FitResult(best, history, best_epoch, steps)


def load_pair_directory(root, manifest=None):
    """Read ``noisy/<stem>.wav`` and ``clean/<stem>.wav`` pairs under ``root``.

    ``manifest`` is an optional text file with one stem per line restricting
    (and ordering) the split. Missing partners raise InvalidArgument naming
    the stems.
    """
    root = Path(root)
    noisy_dir, clean_dir = root / "noisy", root / "clean"
    if not noisy_dir.is_dir() or not clean_dir.is_dir():
        raise InvalidArgument(f"{root} must contain noisy/ and clean/ subdirectories")
    if manifest is not None:
        stems = [s.strip() for s in Path(manifest).read_text().splitlines() if s.strip()]
    else:
        stems = sorted(p.stem for p in noisy_dir.glob("*.wav"))
    if not stems:
        raise InvalidArgument(f"no utterances listed for {root}")
    missing = [s for s in stems
               if not (noisy_dir / f"{s}.wav").is_file() or not (clean_dir / f"{s}.wav").is_file()]
    if missing:
        raise InvalidArgument("unpaired stems: " + ", ".join(missing))
    return [(read_wav(noisy_dir / f"{s}.wav"), read_wav(clean_dir / f"{s}.wav")) for s in stems]
