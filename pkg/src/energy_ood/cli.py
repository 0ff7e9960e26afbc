"""Command-line surface: reproducible scoring, calibration, evaluation,
training, temperature sweeps, and GDA fitting/scoring.

Every command writes a ``<output>.manifest.json`` beside its primary
output recording the full configuration, seeds, library version, and
input/output paths; re-running with the same inputs reproduces every
output byte for byte (the manifest's wall-clock duration excepted).

Exit codes: 0 success, 2 usage or parse failure, 3 numerical failure
(training divergence, singular covariance), 1 anything else.

Machine-readable files carry full float precision (shortest round-trip
formatting); tables printed for humans use 6 decimal places. The
``ENERGY_OOD_THREADS`` variable (0 = auto) caps internal parallelism;
every computation here is deterministic regardless of its value.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .bench import PRNG_NAME, BenchmarkSpec, generate, load_table
from .detector import SCORE_KINDS, DetectorConfig, achieved_tpr, calibrate_threshold, classify
from .errors import InputError, NumericalError, TableParseError
from .gda import GdaModel, energy_u
from .gda import fit as gda_fit
from .gda import mahalanobis_score
from .metrics import ScoreSet, aupr, full_report
from .mlp import (
    Batch,
    MlpConfig,
    TrainConfig,
    finetune,
    forward_batch,
    init,
    load_checkpoint,
    margins_from_energies,
    pretrain,
    save_checkpoint,
)
from .scores import energy_scores, msp_scores, neg_energy_scores

SCORE_FLAG_TO_KIND = {"energy": "energy", "neg-energy": "neg_energy", "msp": "msp"}
KIND_FLAG_TO_NAME = {
    "neg-energy": "neg_energy",
    "msp": "msp",
    "neg-energy-gda": "neg_energy_gda",
    "mahalanobis": "mahalanobis",
}


def thread_cap() -> int:
    """Parse ENERGY_OOD_THREADS; 0 means auto."""
    raw = os.environ.get("ENERGY_OOD_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise InputError(f"ENERGY_OOD_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise InputError(f"ENERGY_OOD_THREADS must be >= 0, got {cap}")
    return cap


def write_manifest(primary_output, command, config, inputs, outputs, seed, started):
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "library_version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_s": time.time() - started,
        "prng": {"name": PRNG_NAME, "numpy_version": np.__version__},
        "thread_cap": thread_cap(),
    }
    with open(str(primary_output) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_logit_rows(path) -> np.ndarray:
    """Strict CSV of logit rows; optional ``v0,...`` header, equal widths."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "v0":
                expected = [f"v{i}" for i in range(len(row))]
                if row != expected:
                    raise TableParseError("header must be v0,v1,...", path=path, line=1)
                width = len(row)
                continue
            if not row:
                raise TableParseError("blank line", path=path, line=lineno)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise TableParseError(
                    f"expected {width} cells, found {len(row)}", path=path, line=lineno
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise TableParseError(f"non-numeric cell: {exc}", path=path, line=lineno) from None
    if not rows:
        raise TableParseError("no logit rows", path=path)
    return np.array(rows, dtype=np.float64)


def read_score_column(path) -> np.ndarray:
    """Scores from a ``row,score`` CSV (as cmd score writes) or one per line."""
    values = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row == ["row", "score"]:
                header = row
                continue
            if not row:
                raise TableParseError("blank line", path=path, line=lineno)
            if header is not None:
                if len(row) != 2:
                    raise TableParseError(
                        f"expected 2 cells under a row,score header, found {len(row)}",
                        path=path,
                        line=lineno,
                    )
                cell = row[1]
            else:
                if len(row) != 1:
                    raise TableParseError(
                        "expected a single score per line (or a row,score header)",
                        path=path,
                        line=lineno,
                    )
                cell = row[0]
            try:
                values.append(float(cell))
            except ValueError as exc:
                raise TableParseError(f"non-numeric score: {exc}", path=path, line=lineno) from None
    if not values:
        raise TableParseError("no scores", path=path)
    return np.array(values, dtype=np.float64)


def write_score_csv(path, scores) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "score"])
        for i, s in enumerate(scores):
            writer.writerow([i, repr(float(s))])


def positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def tpr_target(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"TPR target must be in (0, 1], got {text}")
    return value


def cmd_score(args) -> int:
    started = time.time()
    logits = read_logit_rows(args.logits)
    kind = SCORE_FLAG_TO_KIND[args.score]
    if kind == "energy":
        scores = energy_scores(logits, args.temp)
    elif kind == "neg_energy":
        scores = neg_energy_scores(logits, args.temp)
    else:
        scores = msp_scores(logits)
    write_score_csv(args.out, scores)
    write_manifest(
        args.out,
        "score",
        {"logits": args.logits, "temp": args.temp, "score": args.score},
        [args.logits],
        [args.out],
        None,
        started,
    )
    print(f"scored {len(scores)} rows -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    started = time.time()
    scores = read_score_column(args.in_scores)
    cfg = calibrate_threshold(scores, args.tpr, score_kind=KIND_FLAG_TO_NAME[args.score_kind])
    cfg.save(args.out)
    write_manifest(
        args.out,
        "calibrate",
        {"in_scores": args.in_scores, "tpr": args.tpr, "score_kind": args.score_kind},
        [args.in_scores],
        [args.out],
        None,
        started,
    )
    tau = "-inf" if cfg.tau == -np.inf else f"{cfg.tau:.6f}"
    print(f"tau {tau}  achieved TPR {achieved_tpr(scores, cfg):.6f}  -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    in_scores = read_score_column(args.in_file)
    out_scores = read_score_column(args.out_file)
    scores = ScoreSet(in_scores, out_scores)
    report = full_report(scores, args.tpr)
    report.save(args.json)
    write_manifest(
        args.json,
        "evaluate",
        {"in": args.in_file, "out": args.out_file, "tpr": args.tpr, "swap_aupr": args.swap_aupr},
        [args.in_file, args.out_file],
        [args.json],
        None,
        started,
    )
    print(f"{'metric':<14}{'value':>12}")
    print(f"{'fpr_at_tpr':<14}{report.fpr_at_tpr:>12.6f}")
    print(f"{'auroc':<14}{report.auroc:>12.6f}")
    print(f"{'aupr':<14}{report.aupr:>12.6f}")
    if args.swap_aupr:
        # AUPR with OOD as the positive class; the JSON schema is fixed,
        # so the swapped orientation is print-only
        swapped = aupr(ScoreSet(-scores.out_scores, -scores.in_scores))
        print(f"{'aupr_swapped':<14}{swapped:>12.6f}")
    print(f"{'n_in':<14}{report.n_in:>12d}")
    print(f"{'n_out':<14}{report.n_out:>12d}")
    print(f"{'tpr_target':<14}{report.tpr_target:>12.6f}")
    return 0


def _load_train_config(args):
    layer_sizes = None
    cfg_doc = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                cfg_doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise TableParseError(f"invalid config JSON: {exc}", path=args.config) from None
        if not isinstance(cfg_doc, dict):
            raise InputError(f"{args.config}: train config must be a JSON object")
        sizes = cfg_doc.pop("layer_sizes", None)
        if sizes is not None:
            layer_sizes = tuple(int(s) for s in sizes)
    cfg = TrainConfig.from_json_dict(cfg_doc)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg, layer_sizes


def _load_train_data(args):
    if args.bench is not None:
        spec = BenchmarkSpec.load(args.bench)
        data = generate(spec)
        train_in = Batch(data.train_in.inputs, data.train_in.labels)
        train_out = Batch(data.train_out.inputs)
        return train_in, train_out, [args.bench]
    table = os.path.join(args.data, "train.csv")
    in_split, out_split = load_table(table, "csv")
    return (
        Batch(in_split.inputs, in_split.labels),
        Batch(out_split.inputs),
        [table],
    )


def cmd_train(args) -> int:
    started = time.time()
    cfg, layer_sizes = _load_train_config(args)
    train_in, train_out, inputs = _load_train_data(args)

    if args.init is not None:
        model, _ = load_checkpoint(args.init)
        inputs.append(args.init)
        if layer_sizes is not None and tuple(layer_sizes) != model.config.layer_sizes:
            raise InputError(
                f"--init layer sizes {model.config.layer_sizes} conflict with config {layer_sizes}"
            )
    else:
        if layer_sizes is None:
            k = int(train_in.labels.max()) + 1
            layer_sizes = (train_in.inputs.shape[1], 32, k)
        model = init(MlpConfig(layer_sizes), seed=cfg.seed)

    if args.mode == "finetune" and args.auto_margins:
        if args.init is None:
            raise InputError("--auto-margins needs --init (a pretrained model)")
        e_in = energy_scores(forward_batch(model, train_in.inputs))
        e_out = energy_scores(forward_batch(model, train_out.inputs))
        m_in, m_out = margins_from_energies(e_in, e_out)
        cfg = dataclasses.replace(cfg, margin_in=m_in, margin_out=m_out)

    log_rows = []
    if args.mode == "pretrain":
        trained = pretrain(model, train_in, cfg, log=log_rows)
    else:
        trained = finetune(model, train_in, train_out, cfg, log=log_rows)

    save_checkpoint(args.out, trained, cfg)
    outputs = [args.out]
    if args.log is not None:
        with open(args.log, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "lr", "nll", "energy_reg", "total"])
            for row in log_rows:
                writer.writerow(
                    [
                        row["epoch"],
                        row["step"],
                        repr(row["lr"]),
                        repr(row["nll"]),
                        repr(row["energy_reg"]),
                        repr(row["total"]),
                    ]
                )
        outputs.append(args.log)
    write_manifest(
        args.out,
        f"train {args.mode}",
        {
            "mode": args.mode,
            "bench": args.bench,
            "data": args.data,
            "config": args.config,
            "init": args.init,
            "auto_margins": args.auto_margins,
            "train_config": cfg.to_json_dict(),
            "layer_sizes": list(trained.config.layer_sizes),
        },
        inputs,
        outputs,
        cfg.seed,
        started,
    )
    final = log_rows[-1]["total"] if log_rows else float("nan")
    print(f"{args.mode}: {len(log_rows)} steps, final total loss {final:.6f} -> {args.out}")
    return 0


def cmd_sweep_temperature(args) -> int:
    started = time.time()
    model, _ = load_checkpoint(args.model)
    spec = BenchmarkSpec.load(args.bench)
    data = generate(spec)
    try:
        temps = [float(t) for t in args.temps.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise InputError(f"bad --temps list: {exc}") from None
    if not temps:
        raise InputError("--temps must list at least one temperature")
    if any(t <= 0 for t in temps):
        raise InputError("temperatures must all be positive")

    logits_in = forward_batch(model, data.test_in.inputs)
    logits_out = forward_batch(model, data.test_out.inputs)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "fpr95", "auroc", "aupr"])
        for t in temps:
            scores = ScoreSet(neg_energy_scores(logits_in, t), neg_energy_scores(logits_out, t))
            report = full_report(scores, args.tpr)
            writer.writerow(
                [repr(t), repr(report.fpr_at_tpr), repr(report.auroc), repr(report.aupr)]
            )
    write_manifest(
        args.out,
        "sweep-temperature",
        {"model": args.model, "bench": args.bench, "temps": temps, "tpr": args.tpr},
        [args.model, args.bench],
        [args.out],
        spec.seed,
        started,
    )
    print(f"swept {len(temps)} temperatures -> {args.out}")
    return 0


def cmd_gda(args) -> int:
    started = time.time()
    if args.action == "fit":
        in_split, _ = load_table(args.features, "csv")
        model = gda_fit(in_split.inputs, in_split.labels, ridge=args.ridge)
        model.save(args.model)
        write_manifest(
            args.model,
            "gda fit",
            {"features": args.features, "ridge": args.ridge},
            [args.features],
            [args.model],
            None,
            started,
        )
        print(f"fitted {model.n_classes}-class GDA over {model.dim} features -> {args.model}")
        return 0

    model = GdaModel.load(args.model)
    in_split, out_split = load_table(args.features, "csv")
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "split", "energy_u", "mahalanobis"])
        row_id = 0
        for split_name, split in (("in", in_split), ("out", out_split)):
            for x in split.inputs:
                writer.writerow(
                    [
                        row_id,
                        split_name,
                        repr(energy_u(model, x)),
                        repr(mahalanobis_score(model, x)),
                    ]
                )
                row_id += 1
    write_manifest(
        args.out,
        "gda score",
        {"features": args.features, "model": args.model},
        [args.features, args.model],
        [args.out],
        None,
        started,
    )
    print(f"scored {row_id} rows -> {args.out}")
    return 0


def cmd_filter(args) -> int:
    started = time.time()
    cfg = DetectorConfig.load(args.detector)
    logits = read_logit_rows(args.logits)
    if cfg.score_kind == "neg_energy":
        scores = neg_energy_scores(logits, args.temp)
    elif cfg.score_kind == "msp":
        scores = msp_scores(logits)
    else:
        raise InputError(f"filter needs a logit-based detector, got {cfg.score_kind!r}")
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "score", "decision", "class"])
        n_accepted = 0
        for i, (row, score) in enumerate(zip(logits, scores)):
            decision = classify(float(score), cfg)
            label = int(np.argmax(row)) if decision.label == 1 else ""
            n_accepted += decision.label
            writer.writerow([i, repr(float(score)), decision.label, label])
    write_manifest(
        args.out,
        "filter",
        {"logits": args.logits, "detector": args.detector, "temp": args.temp},
        [args.logits, args.detector],
        [args.out],
        None,
        started,
    )
    print(f"accepted {n_accepted}/{len(logits)} rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="energy-ood",
        description="Energy-based out-of-distribution detection toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a logit table")
    p.add_argument("--logits", required=True, help="CSV of logit rows")
    p.add_argument("--temp", type=positive_float, default=1.0)
    p.add_argument("--score", choices=sorted(SCORE_FLAG_TO_KIND), default="neg-energy")
    p.add_argument("--out", required=True, help="output CSV (row,score)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate", help="calibrate a detection threshold")
    p.add_argument("--in-scores", dest="in_scores", required=True)
    p.add_argument("--tpr", type=tpr_target, default=0.95)
    p.add_argument("--score-kind", choices=sorted(KIND_FLAG_TO_NAME), default="neg-energy")
    p.add_argument("--out", required=True, help="detector JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="detection metrics for two score files")
    p.add_argument("--in", dest="in_file", required=True, help="in-distribution scores")
    p.add_argument("--out", dest="out_file", required=True, help="OOD scores")
    p.add_argument("--tpr", type=tpr_target, default=0.95)
    p.add_argument("--json", required=True, help="metrics report JSON path")
    p.add_argument(
        "--swap-aupr",
        action="store_true",
        help="also print AUPR with OOD as the positive class",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="pretrain or fine-tune the classifier")
    p.add_argument("mode", choices=["pretrain", "finetune"])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bench", help="benchmark spec JSON")
    src.add_argument("--data", help="directory containing train.csv")
    p.add_argument("--config", help="train config JSON (may include layer_sizes)")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument(
        "--auto-margins",
        action="store_true",
        help="derive margins from the init model's train-set energies",
    )
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-temperature", help="metrics across temperatures")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--bench", required=True, help="benchmark spec JSON")
    p.add_argument("--temps", default="1,2,5,10,100,1000")
    p.add_argument("--tpr", type=tpr_target, default=0.95)
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_sweep_temperature)

    p = sub.add_parser("gda", help="fit or score the feature-space GDA model")
    p.add_argument("action", choices=["fit", "score"])
    p.add_argument("--features", required=True, help="feature table CSV")
    p.add_argument("--model", required=True, help="GDA model JSON")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--out", help="score CSV path (score action)")
    p.set_defaults(func=cmd_gda)

    p = sub.add_parser("filter", help="filter-then-classify a logit table")
    p.add_argument("--logits", required=True)
    p.add_argument("--detector", required=True, help="detector JSON")
    p.add_argument("--temp", type=positive_float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        if args.command == "gda" and args.action == "score" and args.out is None:
            parser.error("gda score needs --out")
        thread_cap()
        return args.func(args)
    except (InputError, TableParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
