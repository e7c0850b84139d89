"""Command-line surface: train, eval, params, compare.

Run settings resolve in three layers: explicit flags override the dataset
registry entry, which overrides built-in defaults. The archive root comes
from --root or the GRUFCN_UCR_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import data_ucr, metrics, model as model_mod, train as train_mod

ROOT_ENV_VAR = "GRUFCN_UCR_ROOT"

# fallbacks for datasets loaded from explicit paths with no registry entry
DEFAULT_EPOCHS = 2000
DEFAULT_TRAIN_BATCH = 128
DEFAULT_TEST_BATCH = 128


class CliError(Exception):
    pass


def _shipped(name: str):
    return resources.files("grufcn.data").joinpath(name)


def _resolve_dataset(args) -> data_ucr.UcrDataset:
    if args.train_path and args.test_path:
        name = args.dataset or Path(args.train_path).stem.replace("_TRAIN", "")
        return data_ucr.make_dataset(args.train_path, args.test_path, name)
    if not args.dataset:
        raise CliError("need --dataset (with --root) or --train-path/--test-path")
    root = args.root or os.environ.get(ROOT_ENV_VAR)
    if not root:
        raise CliError(f"no archive root: pass --root or set {ROOT_ENV_VAR}")
    train_file, test_file = data_ucr.find_split_files(root, args.dataset)
    return data_ucr.make_dataset(train_file, test_file, args.dataset)


def _run_settings(args):
    """flags > registry > defaults for epochs and batch sizes."""
    epochs, train_batch, test_batch = DEFAULT_EPOCHS, DEFAULT_TRAIN_BATCH, DEFAULT_TEST_BATCH
    if args.dataset:
        try:
            entry = data_ucr.registry_lookup(args.dataset)
            epochs, train_batch, test_batch = entry.epochs, entry.train_batch, entry.test_batch
        except data_ucr.UnknownDatasetError:
            if not (args.train_path and args.test_path):
                raise
    if args.epochs is not None:
        epochs = args.epochs
    if args.train_batch is not None:
        train_batch = args.train_batch
    if args.eval_batch is not None:
        test_batch = args.eval_batch
    return epochs, train_batch, test_batch


def cmd_train(args) -> int:
    dataset = _resolve_dataset(args)
    epochs, train_batch, test_batch = _run_settings(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = model_mod.ArchConfig(
        series_length=dataset.series_length,
        num_classes=dataset.num_classes,
        cell_kind=args.cell,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    net = model_mod.build(config)
    schedule = train_mod.LrSchedule(initial=args.lr)
    run = train_mod.TrainRun(
        epochs=epochs,
        train_batch=train_batch,
        eval_batch=test_batch,
        seed=args.seed,
        schedule=schedule,
        best_checkpoint_path=str(out_dir / "best.ckpt"),
    )
    started = time.perf_counter()
    train_mod.fit(net, dataset, run)
    elapsed = time.perf_counter() - started
    train_mod.write_history_csv(out_dir / "history.csv", run.history)
    model_mod.save_checkpoint(net, out_dir / "final.ckpt")
    if run.epochs == 0:
        # keep the artifact contract even when no epoch ran
        model_mod.save_checkpoint(net, out_dir / "best.ckpt")
    test_error, test_f1 = _evaluate_metrics(net, dataset, test_batch)
    summary = {
        "dataset": dataset.name,
        "epochs": epochs,
        "train_batch": train_batch,
        "eval_batch": test_batch,
        "seed": args.seed,
        "cell_kind": args.cell,
        "parameter_count": model_mod.parameter_count(config),
        "final_test_error": test_error,
        "final_test_f1_macro": test_f1,
        "wall_clock_seconds": elapsed,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"trained {dataset.name}: test error {test_error:.6f}, "
          f"macro f1 {test_f1:.6f}, params {summary['parameter_count']}")
    return 0


def _predict(net, x, chunk: int) -> np.ndarray:
    preds = []
    chunk = max(1, chunk)
    for start in range(0, x.shape[0], chunk):
        probs, _ = model_mod.forward(net, x[start:start + chunk], training=False)
        preds.append(np.argmax(probs, axis=1))
    return np.concatenate(preds)


def _evaluate_metrics(net, dataset, chunk: int):
    preds = _predict(net, dataset.test_x, chunk)
    err = metrics.error_rate(preds, dataset.test_y)
    conf = metrics.confusion_counts(preds, dataset.test_y, dataset.num_classes)
    return err, metrics.f1_scores(conf)


def cmd_eval(args) -> int:
    net = model_mod.load_checkpoint(args.checkpoint)
    dataset = _resolve_dataset(args)
    if dataset.series_length != net.config.series_length:
        raise CliError(
            f"checkpoint expects series length {net.config.series_length}, "
            f"dataset {dataset.name} has {dataset.series_length}"
        )
    if dataset.num_classes != net.config.num_classes:
        raise CliError(
            f"checkpoint expects {net.config.num_classes} classes, "
            f"dataset {dataset.name} has {dataset.num_classes}"
        )
    chunk = args.eval_batch or DEFAULT_TEST_BATCH
    preds = _predict(net, dataset.test_x, chunk)
    err = metrics.error_rate(preds, dataset.test_y)
    conf = metrics.confusion_counts(preds, dataset.test_y, dataset.num_classes)
    f1 = metrics.f1_scores(conf)
    print(f"test error: {err:.6f}")
    print(f"macro f1:   {f1:.6f}")
    print("class,tp,fp,fn")
    for c in range(dataset.num_classes):
        print(f"{c},{int(conf.tp[c])},{int(conf.fp[c])},{int(conf.fn[c])}")
    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8") as fh:
            fh.write("index,predicted,truth\n")
            for i, (p, t) in enumerate(zip(preds, dataset.test_y)):
                fh.write(f"{i},{int(p)},{int(t)}\n")
    return 0


def _count_pair(entry) -> tuple[int, int]:
    base = dict(series_length=entry.series_length, num_classes=entry.num_classes)
    return (
        model_mod.parameter_count(model_mod.ArchConfig(cell_kind=model_mod.GRU, **base)),
        model_mod.parameter_count(model_mod.ArchConfig(cell_kind=model_mod.LSTM, **base)),
    )


def cmd_params(args) -> int:
    reg = data_ucr.registry()
    if args.all:
        names = list(reg)
    elif args.dataset:
        names = [data_ucr.registry_lookup(args.dataset).name]
    else:
        raise CliError("need a dataset name or --all")
    print("dataset,gru_fcn_params,lstm_fcn_params")
    counts = {}
    for name in names:
        g, l = _count_pair(reg[name])
        counts[name] = (g, l)
        print(f"{name},{g},{l}")
    if args.all:
        total_g = sum(g for g, _ in counts.values())
        total_l = sum(l for _, l in counts.values())
        print(f"Total,{total_g},{total_l}")
        counts["Total"] = (total_g, total_l)
    if args.check is not None:
        ref_path = args.check if args.check != "" else _shipped("published_param_counts.csv")
        mismatches = 0
        import csv as _csv
        with open(ref_path, "r", encoding="utf-8") as fh:
            for row in _csv.DictReader(fh):
                name = row["dataset"]
                if name not in counts:
                    continue
                expected = (int(row["GRU-FCN"]), int(row["LSTM-FCN"]))
                if counts[name] != expected:
                    mismatches += 1
                    print(f"MISMATCH {name}: computed {counts[name]}, "
                          f"reference {expected}", file=sys.stderr)
        print(f"reference check: {mismatches} mismatches")
        if mismatches:
            return 1
    return 0


def cmd_compare(args) -> int:
    matrix = metrics.ErrorMatrix.from_csv(
        args.errors if args.errors else _shipped("published_errors.csv")
    )
    class_counts = _load_class_counts(args.class_counts, matrix.datasets)
    mean_ranks, no_best = metrics.rank_models(matrix, missing_mode=args.missing_mode)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    print("model,mean_rank,no_best,mpce")
    for m in matrix.models:
        col = matrix.column(m)
        present = ~np.isnan(col)
        model_mpce = metrics.mpce(col[present], class_counts[present])
        print(f"{m},{mean_ranks[m]:.6f},{no_best[m]},{model_mpce:.6f}")

    with open(out_dir / "wilcoxon_pvalues.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("model," + ",".join(matrix.models) + "\n")
        for i, a in enumerate(matrix.models):
            cells = []
            for j, b in enumerate(matrix.models):
                if j <= i:
                    cells.append("")
                    continue
                col_a, col_b = matrix.column(a), matrix.column(b)
                both = ~np.isnan(col_a) & ~np.isnan(col_b)
                try:
                    res = metrics.wilcoxon_signed_rank(col_a[both], col_b[both])
                    cells.append(f"{res.pvalue:.6e}")
                except metrics.UndefinedTestError:
                    cells.append("")
            fh.write(a + "," + ",".join(cells) + "\n")

    cd = metrics.nemenyi_cd(len(matrix.models), len(matrix.datasets), alpha=args.alpha)
    print(f"critical difference (alpha={args.alpha}): {cd:.6f}")
    (out_dir / "cd_diagram.svg").write_text(metrics.cd_diagram_svg(mean_ranks, cd))
    return 0


def _load_class_counts(path, datasets) -> np.ndarray:
    if path:
        import csv as _csv
        with open(path, "r", encoding="utf-8") as fh:
            table = {row["dataset"]: int(row["classes"]) for row in _csv.DictReader(fh)}
        missing = [d for d in datasets if d not in table]
        if missing:
            raise CliError(f"class-counts file lacks entries for: {', '.join(missing)}")
        return np.asarray([table[d] for d in datasets], dtype=np.float64)
    counts = []
    for d in datasets:
        counts.append(data_ucr.registry_lookup(d).num_classes)
    return np.asarray(counts, dtype=np.float64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grufcn",
        description="Train, evaluate, and statistically compare the hybrid "
                    "recurrent-convolutional univariate time-series classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_args(p):
        p.add_argument("--dataset", help="dataset name (resolved under the archive root)")
        p.add_argument("--root", help=f"archive root directory (fallback: ${ROOT_ENV_VAR})")
        p.add_argument("--train-path", help="explicit training split file")
        p.add_argument("--test-path", help="explicit test split file")

    p_train = sub.add_parser(
        "train",
        help="train a model and write history.csv, best.ckpt, final.ckpt, summary.json",
    )
    add_dataset_args(p_train)
    p_train.add_argument("--out", default="run", help="output directory (default: run)")
    p_train.add_argument("--seed", type=int, default=0, help="run seed (default: 0)")
    p_train.add_argument("--epochs", type=int, help="override registry epoch count")
    p_train.add_argument("--train-batch", type=int, help="override registry train batch size")
    p_train.add_argument("--eval-batch", type=int, help="override registry test batch size")
    p_train.add_argument("--lr", type=float, default=0.01,
                         help="initial learning rate (default: 0.01)")
    p_train.add_argument("--dropout", type=float, default=0.8,
                         help="recurrent-branch dropout rate (default: 0.8)")
    p_train.add_argument("--cell", choices=(model_mod.GRU, model_mod.LSTM),
                         default=model_mod.GRU, help="recurrent cell kind (default: gru)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    add_dataset_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file to load")
    p_eval.add_argument("--eval-batch", type=int, help="evaluation chunk size")
    p_eval.add_argument("--predictions", help="optional CSV of per-sample predictions")
    p_eval.set_defaults(func=cmd_eval)

    p_params = sub.add_parser(
        "params", help="print closed-form parameter counts for both cell kinds"
    )
    p_params.add_argument("dataset", nargs="?", help="dataset name")
    p_params.add_argument("--all", action="store_true", help="all 85 registry datasets")
    p_params.add_argument("--check", nargs="?", const="", default=None, metavar="CSV",
                          help="diff against a reference CSV "
                               "(no value: the shipped reference table)")
    p_params.set_defaults(func=cmd_params)

    p_cmp = sub.add_parser(
        "compare",
        help="rank models from an error-matrix CSV; emit Wilcoxon p-values and a CD diagram",
    )
    p_cmp.add_argument("--errors", help="error-matrix CSV "
                                        "(default: the shipped reference table)")
    p_cmp.add_argument("--class-counts", help="CSV with dataset,classes columns "
                                              "(default: the shipped registry)")
    p_cmp.add_argument("--missing-mode", choices=("exclude", "worst"), default="exclude",
                       help="how absent entries affect ranking (default: exclude)")
    p_cmp.add_argument("--alpha", type=float, default=0.05,
                       help="significance level for the critical difference (default: 0.05)")
    p_cmp.add_argument("--out", default="compare", help="output directory (default: compare)")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
