"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in
the terminal summary.
"""

import time

import numpy as np
import pytest

from masnet import cli, cost, dsp, engine, layers as L, metrics, model, training as tr
from masnet.model import LayerSpec

from conftest import ACCEPTANCE_LINES
from gradcheck import end_to_end_error, max_grad_error
from oracles import naive_dft


def verdict(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_fma_reproduction():
    start = time.perf_counter()
    targets = {"llasnet-8": (2240, 1e-3), "llasnet-15": (5199, 1e-3), "masnet-16": (404, 5e-3),
               "masnet-22": (584, 1e-2), "masnet-28": (765, 1e-2), "masnet-34": (945, 1e-2),
               "masnet-9": (194, 5e-3)}
    bad = []
    for arch, (mfma, tol) in targets.items():
        got = cost.analyze(model.build_spec(arch)).total_per_second / 1e6
        if abs(got / mfma - 1) > tol:
            bad.append(f"{arch}={got:.1f}M")
    for depth in (9, 16, 22, 28, 34):
        a = cost.analyze(model.build_spec(f"masnet-{depth}")).total_per_second
        b = cost.analyze(model.build_spec(f"masnet-r-{depth}")).total_per_second
        if a != b:
            bad.append(f"masnet-r-{depth} differs")
    if not any("224M" in n for n in cost.analyze(model.build_spec("masnet-9")).notes):
        bad.append("masnet-9 table conflict not documented")
    ms = 1e3 * (time.perf_counter() - start)
    verdict(1, "FMA reproduction", not bad, ", ".join(bad) or f"all totals in tolerance ({ms:.1f} ms)")


def test_criterion_2_batch_stream_parity():
    runs = [(arch, 8, 33) for arch in model.ARCH_IDS]
    runs += [("masnet-9", 32, 129), ("masnet-16", 32, 129)]
    worst, bad = 0.0, []
    for arch, width, bins in runs:
        r = cli.parity_check(arch, frames=64, seed=0, width=width, bins=bins)
        worst = max(worst, r["max_abs_diff"])
        if not r["passed"]:
            bad.append(f"{arch}@{width}x{bins}")
    verdict(2, "batch/stream parity", not bad,
            ", ".join(bad) or f"{len(runs)} configurations, max |diff| {worst:.2e}, FMA equal")


def _probe(net, x, t, lag):
    y = x.copy()
    y[:, t - lag] += 100.0
    return engine.forward_batch(net, y).to_channels()


@pytest.mark.slow
def test_criterion_3_causality():
    problems, found = [], {}
    rng = np.random.default_rng(0)
    for arch in ("llasnet-15", "masnet-16"):
        net = model.init_network(model.build_spec(arch, 4, 9), 0, dtype=np.float64)
        # non-negative weights and inputs keep every ReLU open, so no path is cut
        for _, name, v in net.named_parameters():
            if name.endswith("weight"):
                v[...] = np.abs(v)
        n = 540
        x = np.abs(rng.normal(size=(2, n, 9)))
        base = engine.forward_batch(net, x).to_channels()
        t = n - 1
        for s in (0, 100, 300, t):
            out = _probe(net, x, s, 0)
            if not np.array_equal(out[:, :s], base[:, :s]):
                problems.append(f"{arch}: frame {s} leaks backwards")
        if np.array_equal(_probe(net, x, t, 510)[:, t], base[:, t]):
            problems.append(f"{arch}: lag 510 has no effect")
        for lag in range(511, n):
            if not np.array_equal(_probe(net, x, t, lag)[:, t], base[:, t]):
                problems.append(f"{arch}: lag {lag} has an effect")
                break
        found[arch] = cost.measure_time_receptive_field(net, n_frames=n)
        if found[arch] != 511:
            problems.append(f"{arch}: measured field {found[arch]}")
    verdict(3, "causality", not problems, "; ".join(problems)
            or "prefixes bit-identical, measured fields " + str(found))


def test_criterion_4_gradients():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    up = rng.normal(size=(2, 4, 7, 6))
    errs = {}
    dx, dw, db = L.conv_backward(up, L.conv_forward(x, w, 2, 1, b)[1])
    errs["conv"] = max_grad_error(lambda: float((L.conv_forward(x, w, 2, 1, b)[0] * up).sum()),
                                  [dx, dw, db], [x, w, b])
    wd = rng.normal(size=(3, 1, 3, 5))
    upd = rng.normal(size=x.shape)
    dx, dw = L.depthwise_backward(upd, L.depthwise_forward(x, wd, 1, 2)[1])
    errs["depthwise"] = max_grad_error(
        lambda: float((L.depthwise_forward(x, wd, 1, 2)[0] * upd).sum()), [dx, dw], [x, wd])
    g, be = rng.normal(size=3), rng.normal(size=3)
    for name, running in (("batchnorm", None), ("batchnorm_frozen",
                                                 (rng.normal(size=3), rng.uniform(0.5, 2, 3)))):
        grads = L.batchnorm_backward(upd, L.batchnorm_forward(x, g, be, 1e-5, running)[1])
        errs[name] = max_grad_error(
            lambda: float((L.batchnorm_forward(x, g, be, 1e-5, running)[0] * upd).sum()),
            grads, [x, g, be])
    xr = x.copy()
    xr[np.abs(xr) < 1e-3] = 0.5
    errs["relu"] = max_grad_error(lambda: float((L.relu_forward(xr)[0] * upd).sum()),
                                  [L.relu_backward(upd, L.relu_forward(xr)[1])], [xr])
    mask, noisy, clean = (rng.normal(size=(2, 2, 3, 5)) for _ in range(3))
    errs["mask_mse"] = max_grad_error(lambda: tr.masked_loss_and_grad(mask, noisy, clean)[0],
                                      [tr.masked_loss_and_grad(mask, noisy, clean)[1]], [mask])
    e2e = end_to_end_error("masnet-9", n_params=50)
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= 1e-6 and e2e <= 1e-4
    verdict(4, "gradient correctness", ok,
            f"worst per-layer {worst} {errs[worst]:.1e} (<=1e-6), end-to-end {e2e:.1e} (<=1e-4)")


def test_criterion_5_stft_fidelity():
    rng = np.random.default_rng(0)
    rt = max(np.max(np.abs(dsp.istft(dsp.stft(x), 4096).samples - x))
             for x in rng.uniform(-1, 1, (5, 4096)))
    w = dsp.hann_window(256)
    cola = bool(np.all(w[:128] + w[128:] == 1.0))
    sig = rng.normal(size=256)
    one = dsp.stft(sig).to_complex()[1]  # frame 1 spans samples [0, 256)
    full = naive_dft(sig * w)
    herm = np.concatenate([one, np.conj(one[-2:0:-1])])
    e_full = np.sum(np.abs(full) ** 2)
    parseval = max(abs(np.sum(np.abs(herm) ** 2) - e_full) / e_full,
                   abs(e_full / 256 - np.sum((sig * w) ** 2)) / np.sum((sig * w) ** 2),
                   np.max(np.abs(one - full[:129])) / np.max(np.abs(full)))
    ok = rt <= 1e-6 and cola and parseval <= 1e-6
    verdict(5, "STFT fidelity", ok,
            f"round trip {rt:.1e}, COLA exact {cola}, Parseval rel {parseval:.1e}")


@pytest.mark.slow
def test_criterion_6_desk_scale_training():
    start = time.perf_counter()
    net = model.init_network(model.tiny_masnet(8, 6, 33, residual=True), 0, zero_output=True)
    train = tr.synthetic_pairs(64, 4096, seed=1)
    val = tr.synthetic_pairs(8, 4096, seed=2)
    test = tr.synthetic_pairs(16, 4096, seed=3)
    cfg = tr.TrainConfig(learning_rate=1e-4, batch_size=16, epochs=50,
                         max_samples_per_utterance=4096, seed=0)
    res = tr.fit(net, train, cfg, val)
    initial, final = res.history[0][2], res.history[-1][2]
    noisy_snr = metrics.mean_snr_db([(c, n) for n, c in test])
    out_snr = metrics.mean_snr_db([(c, engine.enhance_waveform(res.network, n)) for n, c in test])
    gain = out_snr - noisy_snr
    ok = res.steps == 200 and final <= 0.5 * initial and gain >= 3.0
    verdict(6, "desk-scale training", ok,
            f"{res.steps} steps, val loss {initial:.4g} -> {final:.4g} "
            f"(ratio {final / initial:.3f}, need <=0.5), SNR gain {gain:+.2f} dB "
            f"(need >=3), {time.perf_counter() - start:.0f} s")


SMOKE = """\
[model]
arch = tiny
width = 4
blocks = 3
freq_bins = 33
residual = true
zero_output = true

[train]
learning_rate = 1e-3
epochs = 3
batch_size = 4
max_samples_per_utterance = 2048
seed = 11

[data]
synthetic_train = 8
synthetic_val = 4
synthetic_samples = 2048

[output]
checkpoint = best.masn
history = history.csv
"""


def test_criterion_7_end_to_end_determinism(tmp_path):
    from masnet import wavio
    histories = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        (d / "run.ini").write_text(SMOKE)
        assert cli.main(["train", str(d / "run.ini"), "--quiet"]) == 0
        histories.append((d / "history.csv").read_bytes())
    net = model.init_network(model.build_spec("masnet-16"), 0)
    x = np.random.default_rng(1).normal(size=(1, 2, 32, 129)).astype(np.float32)
    tr.calibrate_batchnorm(net, x)
    model.save_checkpoint(net, tmp_path / "net.masn")
    noisy, _ = tr.synthetic_pairs(1, 16000, seed=5)[0]
    (tmp_path / "in.wav").write_bytes(wavio.encode_wav(wavio.quantize(noisy.samples)))
    outs = []
    for mode in ("batch", "stream"):
        out = tmp_path / f"{mode}.wav"
        assert cli.main(["enhance", str(tmp_path / "in.wav"), str(out),
                         "--weights", str(tmp_path / "net.masn"), "--mode", mode]) == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] and histories[0] == histories[1]
    verdict(7, "end-to-end determinism", ok,
            f"enhance WAVs identical {outs[0] == outs[1]}, "
            f"history files identical {histories[0] == histories[1]}")


def test_criterion_8_residual_identity():
    layer = LayerSpec("residual_mas_block", 8, 8, 5, 5, 4, 2)
    rng = np.random.default_rng(3)
    p = {k: rng.normal(size=s).astype(np.float32) for k, s in layer.parameter_shapes().items()}
    for k in ("dw_bn_running_var", "pw_bn_running_var"):
        p[k] = np.abs(p[k]) + 0.1
    for k in ("pw_weight", "pw_bn_gamma", "pw_bn_beta"):
        p[k][...] = 0
    results = {}
    for dtype in (np.float32, np.float64):
        x = rng.normal(size=(8, 40, 17)).astype(dtype)
        q = {k: v.astype(dtype) for k, v in p.items()}
        results[np.dtype(dtype).name] = bool(np.array_equal(engine.apply_layer_batch(layer, q, x), x))
    verdict(8, "residual identity", all(results.values()), f"bit-exact identity {results}")
