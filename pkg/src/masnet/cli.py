"""Command-line entry point: enhance, train, cost, eval, parity.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import cost, engine, metrics, model, training, wavio
from .config import load_config
from .errors import CorruptCheckpoint, InvalidArgument, MasnetError, TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ENHANCE_HELP = """\
Denoise a 16 kHz mono 16-bit WAV file. In stream mode input is consumed one
hop (128 samples) at a time and each spectrogram frame passes through the
cached incremental inference path; algorithmic latency is one window
(256 samples, 16 ms). Both modes produce byte-identical output."""


class UsageError(Exception):
    pass


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


# -- enhance ---------------------------------------------------------------------

def cmd_enhance(args):
    try:
        w = wavio.read_wav(args.input)
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot read {args.input}: {exc.strerror}")
    except InvalidArgument as exc:
        return _fail(EXIT_DATA, f"bad WAV {args.input}: {exc}")
    try:
        net = model.load_checkpoint(args.weights)
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot read checkpoint {args.weights}: {exc.strerror}")
    except (CorruptCheckpoint, InvalidArgument) as exc:
        return _fail(EXIT_DATA, f"bad checkpoint {args.weights}: {exc}")
    if args.model and args.model != net.spec.name:
        return _fail(EXIT_DATA, f"shape mismatch: checkpoint holds {net.spec.name}, "
                                f"not {args.model}")
    try:
        out = engine.enhance_waveform(net, w, args.mode)
    except InvalidArgument as exc:
        return _fail(EXIT_DATA, str(exc))
    wavio.write_wav(args.output, out)
    return EXIT_OK


# -- train -----------------------------------------------------------------------

def _train_network(rc):
    m = rc.model
    arch = m.get("arch", "tiny")
    freq_bins = m.get("freq_bins", 129)
    width = m.get("width", 32)
    if arch == "tiny":
        spec = model.tiny_masnet(width, m.get("blocks", 6), freq_bins, m.get("residual", False))
    else:
        spec = model.build_spec(arch, width, freq_bins)
    if rc.path("model", "weights"):
        return model.load_checkpoint(rc.path("model", "weights"))
    return model.init_network(spec, m.get("init_seed", 0), zero_output=m.get("zero_output", False))


def _datasets(rc):
    d = rc.data
    if "train_dir" in d:
        train = training.load_pair_directory(rc.path("data", "train_dir"),
                                             rc.path("data", "train_manifest"))
        val = training.load_pair_directory(rc.path("data", "val_dir") or rc.path("data", "train_dir"),
                                           rc.path("data", "val_manifest"))
        return train, val
    n = d.get("synthetic_samples", 4096)
    seed = d.get("synthetic_seed", 1)
    train = training.synthetic_pairs(d.get("synthetic_train", 64), n, seed=seed)
    val = training.synthetic_pairs(d.get("synthetic_val", 8), n, seed=seed + 1000)
    return train, val


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            writer.writerow([epoch, repr(float(tr)), repr(float(va))])


def cmd_train(args):
    try:
        rc = load_config(args.config)
        for key in ("checkpoint", "history"):
            if key not in rc.output:
                raise InvalidArgument(f"[output] {key} is required")
        net = _train_network(rc)
        train, val = _datasets(rc)
    except OSError as exc:
        return _fail(EXIT_DATA, f"{exc.filename}: {exc.strerror}")
    except (InvalidArgument, CorruptCheckpoint) as exc:
        return _fail(EXIT_DATA, str(exc))

    def log(epoch, tr, va):
        if not args.quiet:
            print(f"epoch {epoch}\ttrain {tr:.6g}\tval {va:.6g}", file=sys.stderr)

    try:
        result = training.fit(net, train, rc.train, val, log=log)
    except TrainingDiverged as exc:
        return _fail(EXIT_NUMERIC, f"training diverged: {exc}")
    except InvalidArgument as exc:
        return _fail(EXIT_DATA, str(exc))
    ckpt, hist = rc.path("output", "checkpoint"), rc.path("output", "history")
    for p in (ckpt, hist):
        p.parent.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(result.network, ckpt)
    write_history(hist, result.history)
    plot = rc.path("output", "plot")
    if plot is not None:
        from .plotting import plot_history
        plot_history(result.history, plot)
    print(f"best epoch {result.best_epoch}\tinitial val {result.history[0][2]:.6g}\t"
          f"best val {min(h[2] for h in result.history):.6g}\tsteps {result.steps}")
    return EXIT_OK


# -- cost ------------------------------------------------------------------------

def format_report(report):
    lines = ["layer\tkind\tkernel\tdilation\tfma_per_bin_frame\tfma_per_frame\tfma_per_second"]
    for row in report.rows():
        *head, per_s = row
        lines.append("\t".join(str(v) for v in head) + f"\t{per_s:.0f}")
    lines.append(f"total\t\t\t\t{report.total_per_bin_frame}\t{report.total_per_frame}\t"
                 f"{report.total_per_second:.0f}")
    lines.append(f"# {report.model}: {report.total_per_second / 1e6:.1f}M FMA/s at "
                 f"{report.freq_bins} bins x {report.frame_rate_hz:g} frames/s")
    for note in report.notes:
        lines.append(f"# note: {note}")
    return "\n".join(lines)


def cmd_cost(args):
    try:
        spec = model.build_spec(args.model, args.width, args.bins)
    except InvalidArgument as exc:
        return _fail(EXIT_USAGE, str(exc))
    report = cost.analyze(spec, args.bins, args.frame_rate)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(format_report(report))
    if args.plot:
        from .plotting import plot_fma_report
        plot_fma_report(report, args.plot)
    return EXIT_OK


# -- eval ------------------------------------------------------------------------

def cmd_eval(args):
    clean_dir, enh_dir = Path(args.clean), Path(args.enhanced)
    for d in (clean_dir, enh_dir):
        if not d.is_dir():
            return _fail(EXIT_USAGE, f"not a directory: {d}")
    clean = {p.stem: p for p in clean_dir.glob("*.wav")}
    enhanced = {p.stem: p for p in enh_dir.glob("*.wav")}
    unmatched = sorted(set(clean) ^ set(enhanced))
    for stem in unmatched:
        side = "enhanced" if stem in clean else "clean"
        print(f"error: no {side} file for stem {stem}", file=sys.stderr)
    if not clean or unmatched:
        if not clean:
            print("error: no clean WAV files found", file=sys.stderr)
        return EXIT_DATA
    values = []
    print("stem\tsnr_db\tclipped")
    for stem in sorted(clean):
        try:
            r = metrics.snr_db(wavio.read_wav(clean[stem]), wavio.read_wav(enhanced[stem]))
        except InvalidArgument as exc:
            return _fail(EXIT_DATA, f"{stem}: {exc}")
        values.append(r.snr_db)
        print(f"{stem}\t{r.snr_db:.6f}\t{int(r.clipped)}")
    print(f"mean\t{np.mean(values):.6f}\t")
    return EXIT_OK


# -- parity ----------------------------------------------------------------------

def parity_check(arch, frames=64, seed=0, width=32, bins=129, capacity_skew=0):
    """Random-weight batch vs stream comparison.

    Returns a dict with max_abs_diff, first_bad_frame (or None), batch_fma,
    stream_fma and passed.
    """
    spec = model.build_spec(arch, width, bins)
    net = model.init_network(spec, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(2, frames, bins)).astype(np.float32)
    training.calibrate_batchnorm(net, x[None])
    batch, batch_fma = cost.counted_forward(net, x)
    counter = engine.FmaCounter()
    state = engine.stream_create(net, _capacity_skew=capacity_skew)
    stream = engine.forward_stream(net, x, state, counter)
    diff = np.abs(batch.to_channels() - stream.to_channels()).max(axis=(0, 2))
    bad = np.nonzero(diff > 1e-5)[0]
    first = int(bad[0]) if bad.size else None
    return {
        "max_abs_diff": float(diff.max()),
        "first_bad_frame": first,
        "batch_fma": batch_fma,
        "stream_fma": counter.count,
        "passed": first is None and batch_fma == counter.count,
    }


def cmd_parity(args):
    try:
        r = parity_check(args.model, args.frames, args.seed, args.width, args.bins,
                         args.corrupt_buffer)
    except InvalidArgument as exc:
        return _fail(EXIT_USAGE, str(exc))
    print(f"model\t{args.model}")
    print(f"max_abs_diff\t{r['max_abs_diff']:.3e}")
    print(f"batch_fma\t{r['batch_fma']}")
    print(f"stream_fma\t{r['stream_fma']}")
    if r["first_bad_frame"] is not None:
        print(f"FAIL: first offending frame {r['first_bad_frame']}", file=sys.stderr)
    elif r["batch_fma"] != r["stream_fma"]:
        print("FAIL: FMA counters differ", file=sys.stderr)
    print("result\t" + ("pass" if r["passed"] else "fail"))
    return EXIT_OK if r["passed"] else EXIT_NUMERIC


# -- argument parsing ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="masnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="denoise a WAV file", description=ENHANCE_HELP)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True, help="checkpoint file")
    p.add_argument("--model", help="expected architecture id (checked against the checkpoint)")
    p.add_argument("--mode", choices=("batch", "stream"), default="batch")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cost", help="analytical FMA report")
    p.add_argument("--model", required=True)
    p.add_argument("--frame-rate", type=float, default=cost.DEFAULT_FRAME_RATE)
    p.add_argument("--bins", type=int, default=cost.FREQ_BINS)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--json", action="store_true", help="emit a JSON document")
    p.add_argument("--plot", help="write a per-layer bar chart to this image file")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("eval", help="per-file and mean SNR")
    p.add_argument("--clean", required=True)
    p.add_argument("--enhanced", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("parity", help="batch vs stream equivalence check")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--bins", type=int, default=129)
    p.add_argument("--corrupt-buffer", type=int, default=0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_parity)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except MasnetError as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
