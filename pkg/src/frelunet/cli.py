"""Command-line harness.

    frelunet train     --config cfg.json [--out DIR] [--seed N]
    frelunet gradcheck [--seed N] [--tolerance X] [--out DIR]
    frelunet varprobe  [--depth N] [--width N] [--trials N] [--seed N]
                       [--act KIND] [--gain G] [--check] [--out DIR]
    frelunet act-table [--kinds LIST] [--range A B] [--step S]
                       [--b X] [--k X] [--alpha X] [--delta X] [--out DIR]
    frelunet embed     --config cfg.json [--out DIR] [--seed N]
    frelunet b-trace   --config cfg.json [--b-inits LIST] [--out DIR]
    frelunet compare   --config-dir DIR [--runs N] [--out DIR]

Every command is deterministic given its config/flags. All CSVs carry a
header row and print floats with 17 significant digits so identical runs
produce identical bytes. Exit codes: 0 success, 1 validation error,
2 divergence, 3 oracle failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

from .activations import KINDS, ActivationSpec, act_forward
from .experiments import ConfigError, load_config, resolve_datasets, train
from .gradcheck import run_gradcheck
from .oracles import variance_probe
from .tensor import Rng
from .training import InitPolicy

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_ORACLE = 3


def fmt(value):
    if isinstance(value, float) or isinstance(value, np.floating):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_report_csvs(report, out_dir):
    cols = report.columns
    write_csv(os.path.join(out_dir, "metrics.csv"), cols,
              [[row[c] for c in cols] for row in report.rows])
    trace_cols = ["epoch"] + report.param_columns
    write_csv(os.path.join(out_dir, "params_trace.csv"), trace_cols,
              [[row[c] for c in trace_cols] for row in report.param_trace()])


def _resolve_out(args, config=None):
    if args.out:
        return args.out
    if config is not None and config.out_dir:
        return config.out_dir
    return "."


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = _resolve_out(args, config)
    report = train(config)
    write_report_csvs(report, out_dir)
    final = report.rows[-1]
    print(f"status: {report.status}")
    print(f"epochs: {final['epoch']}  train_err: {final['train_err']:.4f}  "
          f"test_err: {final['test_err']:.4f}")
    print(f"wrote {os.path.join(out_dir, 'metrics.csv')}")
    return EXIT_OK if report.status == "ok" else EXIT_DIVERGENCE


def cmd_gradcheck(args):
    report = run_gradcheck(args.seed, tolerance=args.tolerance)
    rows = [[e.component, e.parameter, e.max_rel_err, e.gated_err, e.threshold,
             "pass" if e.passed else "fail"] for e in report.entries]
    write_csv(os.path.join(_resolve_out(args), "gradcheck.csv"),
              ["component", "parameter", "max_rel_err", "gated_err", "threshold", "status"],
              rows)
    worst = max(report.entries, key=lambda e: e.gated_err / e.threshold)
    print(f"checked {len(report.entries)} (component, parameter) pairs; "
          f"worst {worst.component}.{worst.parameter} rel_err {worst.max_rel_err:.3e}")
    print(f"gradcheck: {'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_ORACLE


def cmd_varprobe(args):
    if args.act not in KINDS:
        print(f"unknown activation {args.act!r}", file=sys.stderr)
        return EXIT_VALIDATION
    spec = ActivationSpec(args.act, b=args.b)
    policy = InitPolicy(gain=args.gain)
    report = variance_probe(args.depth, args.width, spec, policy,
                            args.trials, Rng(args.seed))
    rows = [[l + 1, report.forward_var[l], report.backward_var[l],
             report.backward_ratios[l] if l < len(report.backward_ratios) else ""]
            for l in range(report.depth)]
    write_csv(os.path.join(_resolve_out(args), "varprobe.csv"),
              ["layer", "forward_var", "backward_var", "backward_ratio_to_next"], rows)
    print(f"backward-stable: {'true' if report.backward_stable else 'false'}")
    print(f"log-variance slope per layer: {report.log_var_slope:.4f}")
    print(f"forward offset vs zero-bias prediction: {report.forward_offset:.4f}")
    if args.check and not report.backward_stable:
        return EXIT_ORACLE
    return EXIT_OK


def cmd_act_table(args):
    kinds = [k.strip() for k in args.kinds.split(",")] if args.kinds else list(KINDS)
    for kind in kinds:
        if kind not in KINDS:
            print(f"unknown activation {kind!r}", file=sys.stderr)
            return EXIT_VALIDATION
    lo, hi = args.range
    if args.step <= 0 or hi <= lo:
        print("need range A < B and step > 0", file=sys.stderr)
        return EXIT_VALIDATION
    specs = {kind: ActivationSpec(kind, b=args.b, k=args.k, alpha=args.alpha,
                                  delta=args.delta) for kind in kinds}
    n = int(round((hi - lo) / args.step))
    xs = lo + args.step * np.arange(n + 1)
    cols = {kind: act_forward(specs[kind], xs) for kind in kinds}
    rows = [[x] + [cols[kind][i] for kind in kinds] for i, x in enumerate(xs)]
    write_csv(os.path.join(_resolve_out(args), "act_table.csv"), ["x"] + kinds, rows)
    print(f"wrote {len(rows)} rows for {', '.join(kinds)}")
    return EXIT_OK


def cmd_embed(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = _resolve_out(args, config)
    train_ds, test_ds = resolve_datasets(config)
    if test_ds is None:
        print("embed needs a config with a test set", file=sys.stderr)
        return EXIT_VALIDATION
    report = train(config, train_data=train_ds, test_data=test_ds)
    write_report_csvs(report, out_dir)
    if report.status != "ok":
        print("status: exploding")
        return EXIT_DIVERGENCE
    net = report.network
    feats = np.concatenate([net.features(test_ds.images[i:i + 500])
                            for i in range(0, len(test_ds), 500)])
    rows = [[feats[i, 0], feats[i, 1], int(test_ds.labels[i])]
            for i in range(len(test_ds))]
    write_csv(os.path.join(out_dir, "embeddings.csv"), ["x", "y", "label"], rows)
    acc = 1.0 - report.final_test_err
    print(f"test accuracy: {acc:.4f}")
    print(f"wrote {len(rows)} embedding rows")
    return EXIT_OK


def cmd_b_trace(args):
    config = load_config(args.config)
    out_dir = _resolve_out(args, config)
    try:
        b_inits = [float(v) for v in args.b_inits.split(",")]
    except ValueError:
        print(f"bad --b-inits value {args.b_inits!r}", file=sys.stderr)
        return EXIT_VALIDATION
    all_rows, final_rows, param_cols = [], [], None
    for b0 in b_inits:
        config.activation = ActivationSpec("frelu", b=b0)
        report = train(config)
        if report.status != "ok":
            print(f"b_init {b0}: exploding")
            return EXIT_DIVERGENCE
        param_cols = report.param_columns
        for row in report.rows:
            all_rows.append([b0, row["epoch"]] + [row[c] for c in param_cols])
        final_rows.append([b0] + [report.rows[-1][c] for c in param_cols]
                          + [report.final_test_err])
        finals = ", ".join(f"{report.rows[-1][c]:.4f}" for c in param_cols)
        print(f"b_init {b0:+.2f} -> final b: {finals}")
    write_csv(os.path.join(out_dir, "b_trace.csv"),
              ["b_init", "epoch"] + param_cols, all_rows)
    write_csv(os.path.join(out_dir, "b_trace_final.csv"),
              ["b_init"] + param_cols + ["test_err"], final_rows)
    return EXIT_OK


def cmd_compare(args):
    names = sorted(n for n in os.listdir(args.config_dir) if n.endswith(".json"))
    if not names:
        print(f"no .json configs in {args.config_dir}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = _resolve_out(args)
    summary = []
    exploded = False
    for name in names:
        config = load_config(os.path.join(args.config_dir, name))
        stem = name[:-len(".json")]
        base_seed = config.seed
        errs = []
        for run in range(args.runs):
            config.seed = base_seed + run
            report = train(config)
            write_report_csvs(report, os.path.join(out_dir, stem, f"seed_{config.seed}"))
            if report.status != "ok":
                exploded = True
                print(f"{stem} seed {config.seed}: exploding")
                continue
            errs.append(report.final_test_err)
        if errs:
            mean = float(np.mean(errs))
            std = float(np.std(errs))
            summary.append([stem, config.activation.kind, len(errs), mean, std])
            print(f"{stem}: test_err {mean:.4f} ({std:.4f}) over {len(errs)} runs")
    write_csv(os.path.join(out_dir, "summary.csv"),
              ["config", "activation", "runs", "mean_test_err", "std_test_err"], summary)
    return EXIT_DIVERGENCE if exploded else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="frelunet",
                                     description="rectifier-activation experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("varprobe", help="Monte-Carlo variance propagation probe")
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--width", type=int, default=24)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--act", default="relu")
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--gain", type=float, default=2.0)
    p.add_argument("--check", action="store_true",
                   help="exit 3 unless backward propagation is stable")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_varprobe)

    p = sub.add_parser("act-table", help="tabulate activation outputs to CSV")
    p.add_argument("--kinds", default=None, help="comma-separated subset of kinds")
    p.add_argument("--range", nargs=2, type=float, default=(-3.0, 3.0), metavar=("A", "B"))
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_act_table)

    p = sub.add_parser("embed", help="train and dump 2-d test-set embeddings")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("b-trace", help="frelu bias trace from several initial values")
    p.add_argument("--config", required=True)
    p.add_argument("--b-inits", default="0.5,0,-1")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_b_trace)

    p = sub.add_parser("compare", help="mean/std test error over seeds per config")
    p.add_argument("--config-dir", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap to 1
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
