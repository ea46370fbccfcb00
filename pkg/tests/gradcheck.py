"""Finite-difference gradient checks shared by the training and acceptance tests."""

import numpy as np

from masnet import model, training as tr

from oracles import central_difference, rel_error

H = 1e-4


def max_grad_error(fn, analytic, arrays, n=12, seed=0):
    """Worst relative error of analytic gradients against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        for _ in range(n):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            num = central_difference(fn, arr, idx, H)
            worst = max(worst, rel_error(num, grad[idx], floor=1e-8))
    return worst


def end_to_end_error(arch, n_params=50, seed=0, skip_kinks=False):
    spec = model.build_spec(arch, width=4, freq_bins=8)
    net = model.init_network(spec, seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for _, name, v in net.trainable():
        if name.endswith(("beta", "bias")):
            v[...] = rng.normal(0, 0.2, v.shape)
    x = rng.normal(size=(2, 2, 6, 8))
    clean = rng.normal(size=x.shape)

    def loss():
        m, _ = tr.forward_train(net, x, update_stats=False)
        return tr.masked_loss_and_grad(m, x, clean)[0]

    m, cache = tr.forward_train(net, x, update_stats=False)
    grads = tr.backward(net, cache, tr.masked_loss_and_grad(m, x, clean)[1])
    params = [(k, name, v) for k, name, v in net.trainable()]
    worst = 0.0
    checked = 0
    while checked < n_params:
        k, name, v = params[rng.integers(len(params))]
        idx = tuple(rng.integers(0, s) for s in v.shape)
        num = central_difference(loss, v, idx, H)
        if skip_kinks and rel_error(num, central_difference(loss, v, idx, H / 10)) > 1e-6:
            continue  # the +-h probe straddles a ReLU kink
        worst = max(worst, rel_error(num, grads[k][name][idx], floor=1e-8))
        checked += 1
    return worst
