"""``agtfusion`` command-line front end.

Subcommands: gen-data, train, predict, pseudo-label, self-train, vote,
eval, report, ablate.  Run ``agtfusion <subcommand> --help`` for flags.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for data
errors (unreadable or inconsistent input files, non-finite training).
Outputs are written atomically; randomness comes only from ``--seed`` and
the config file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from ._io import atomic_write_text
from .config import RunConfig, load_config
from .data import (
    CHALLENGE_TRAIN_COUNTS,
    PROBED_TEST_WEIGHTS,
    EmotionLabel,
    PredictionRecord,
    generate_synthetic,
    parse_label_map,
    read_jsonl,
    read_labels,
    read_predictions,
    write_jsonl,
    write_predictions,
)
from .errors import AgtFusionError, ConfigError, DataError, DimensionError, NonFiniteError
from .experiments import ablation_run, build_benchmark
from .metrics import AVERAGINGS, confusion_matrix, distribution_report, f1_scores, write_f1_report
from .models import ARCHITECTURES, create_model, load_model, predict, save_model, train
from .semisup import (
    MODEL_ROLES,
    confidence_filter,
    intersect_pseudo_labels,
    pseudo_label_dataset,
    self_train,
    write_pseudo_labels,
)
from .vote import align_predictions, vote_all, write_vote_labels, write_vote_report

logger = logging.getLogger("agtfusion")

EXIT_DATA = 1
EXIT_USAGE = 2


def _int_triple(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return parts


def _float_pair(text: str) -> tuple[float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return parts


def _label_map(text: str):
    try:
        return parse_label_map(text)
    except DataError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


# ---------------------------------------------------------------- flag groups


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run config (default: built-in defaults)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config (default: 0)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model hyperparameters (override [model])")
    g.add_argument("--d-model", type=int, help="fusion width (default: 32)")
    g.add_argument("--n-heads", type=int, help="attention heads (default: 4)")
    g.add_argument("--d-ff", type=int, help="feed-forward width (default: 64)")
    g.add_argument("--n-layers", type=int, help="transformer blocks per stream (default: 2)")
    g.add_argument("--hidden", type=int, help="MLP hidden width (default: 64)")
    g.add_argument("--amf-threshold", type=float, help="AMF cosine threshold in [-1, 1] (default: 0.2)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training (override [train])")
    g.add_argument("--epochs", type=int, help="epochs (default: 15)")
    g.add_argument("--batch-size", type=int, help="minibatch size (default: 32)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default: 1e-3)")
    g.add_argument("--weight-decay", type=float, help="decoupled weight decay (default: 0)")


def _add_semisup_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("self-training (override [semisup])")
    g.add_argument("--threshold", type=float, help="pseudo-label confidence threshold, strict > (default: 0.9)")


def _add_vote_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("voting (override [vote])")
    g.add_argument("--hubert-weight", type=float, help="audio-only pick probability on sensitive samples (default: 0.8)")
    g.add_argument(
        "--companion-split", type=_float_pair, metavar="B,G",
        help="baseline,AGT pick probabilities; must sum with --hubert-weight to 1 (default: 0.1,0.1)",
    )
    g.add_argument("--sensitive", type=_csv_list, metavar="LABELS", help="sensitive labels (default: worry,sad)")


_OVERRIDES = {
    "seed": "seed",
    "d_model": "model.d_model",
    "n_heads": "model.n_heads",
    "d_ff": "model.d_ff",
    "n_layers": "model.n_layers",
    "hidden": "model.hidden",
    "amf_threshold": "model.amf_threshold",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "weight_decay": "train.weight_decay",
    "threshold": "semisup.threshold",
    "stages": "semisup.stages",
    "hubert_weight": "vote.hubert_weight",
    "companion_split": "vote.companion_split",
    "sensitive": "vote.sensitive_labels",
    "noise_sigma": "data.noise_sigma",
    "conflict_rate": "data.conflict_rate",
    "widths": "data.widths",
    "models": "ablate.models",
    "strategies": "ablate.strategies",
    "features": "ablate.features",
}


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return cfg.override({key: getattr(args, flag, None) for flag, key in _OVERRIDES.items()})


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.out_dir is not None:
        bench = build_benchmark(cfg.benchmark_config())
        args.out_dir.mkdir(parents=True, exist_ok=True)
        for name, part in (("labeled", bench.labeled), ("unlabeled", bench.unlabeled), ("test", bench.test)):
            write_jsonl(part, args.out_dir / f"{name}.jsonl")
            print(f"{name}: {len(part)} samples -> {args.out_dir / f'{name}.jsonl'}")
        return 0
    counts = args.counts if args.counts is not None else cfg.data.train_counts
    ds = generate_synthetic(
        counts,
        widths=cfg.data.widths,
        noise_sigma=cfg.data.noise_sigma,
        conflict_rate=cfg.data.conflict_rate,
        seed=cfg.seed,
        conflict_modalities=cfg.data.conflict_modalities,
    )
    write_jsonl(ds, args.out)
    print(f"{len(ds)} samples -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    data = read_jsonl(args.data)
    model = create_model(args.arch, data.widths, seed=cfg.seed, **cfg.model_params())
    result = train(model, data, cfg.train_config())
    save_model(result.model, args.out)
    if args.losses is not None:
        atomic_write_text(args.losses, "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.losses)))
    final = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(f"{args.arch}: {len(data)} samples, {len(result.losses)} epochs, final loss {final} -> {args.out}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    data = read_jsonl(args.data)
    records = predict(model, data)
    source = args.source or model.architecture
    records = [PredictionRecord(r.id, r.probs, source) for r in records]
    write_predictions(records, args.out)
    print(f"{len(records)} predictions ({model.architecture}) -> {args.out}")
    return 0


def cmd_pseudo_label(args: argparse.Namespace) -> int:
    cfg = _config(args)
    threshold = cfg.semisup.threshold
    sets = [
        confidence_filter(read_predictions(path), threshold, role)
        for role, path in zip(MODEL_ROLES, (args.audio, args.baseline, args.agt))
    ]
    agreed = intersect_pseudo_labels(sets)
    write_pseudo_labels(agreed, args.out)
    if args.pool is not None:
        pool = read_jsonl(args.pool)
        out = args.dataset_out or args.out.with_suffix(".dataset.jsonl")
        write_jsonl(pseudo_label_dataset(pool.without_labels(), agreed), out)
        print(f"pseudo-labeled samples -> {out}")
    confident = ", ".join(f"{s.source} {len(s)}" for s in sets)
    print(f"confident (> {threshold}): {confident}; agreed: {len(agreed)} -> {args.out}")
    return 0


def cmd_self_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    labeled = read_jsonl(args.labeled)
    unlabeled = read_jsonl(args.unlabeled)
    models = {role: create_model(role, labeled.widths, seed=cfg.seed, **cfg.model_params()) for role in MODEL_ROLES}
    result = self_train(models, labeled, unlabeled, cfg.semisup.stages, cfg.semisup.threshold, cfg.train_config())
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    for role, model in result.models.items():
        save_model(model, out / f"{role}.model.json")
    for stage, labels in enumerate(result.pseudo_labels, start=2):
        write_pseudo_labels(labels, out / f"pseudo_labels.stage{stage}.jsonl")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "n_train", "n_pseudo", *(f"pseudo_{lab.display}" for lab in EmotionLabel),
                *(f"confident_{r}" for r in MODEL_ROLES), *(f"loss_{r}" for r in MODEL_ROLES)])
    for rep in result.reports:
        w.writerow([
            rep.stage, rep.n_train, rep.n_pseudo,
            *(rep.composition.get(lab, 0) for lab in EmotionLabel),
            *(rep.per_model_confident.get(r, "") for r in MODEL_ROLES),
            *(f"{rep.final_losses[r]:.6f}" for r in MODEL_ROLES),
        ])
    atomic_write_text(out / "stages.csv", buf.getvalue())
    for rep in result.reports:
        print(f"stage {rep.stage}: {rep.n_train} training samples ({rep.n_pseudo} pseudo-labeled)")
    print(f"models and reports -> {out}")
    return 0


def cmd_vote(args: argparse.Namespace) -> int:
    cfg = _config(args)
    triples = align_predictions(*(read_predictions(p) for p in (args.audio, args.baseline, args.agt)))
    result = vote_all(triples, cfg.vote_config())
    write_vote_labels(result, args.out)
    if args.report is not None:
        write_vote_report(result, args.report)
    r = result.report
    print(f"{len(result.labels)} samples: {r.majority} majority, {r.probabilistic} probabilistic "
          f"(audio {r.picked.get('audio', 0)}, baseline {r.picked.get('baseline', 0)}, agt {r.picked.get('agt', 0)}) "
          f"-> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    preds = read_labels(args.preds)
    truths = read_labels(args.truth)
    cm = confusion_matrix(preds, truths)
    if args.report is not None:
        write_f1_report(cm, args.report)
    if args.averaging == "per_class":
        for lab, score in zip(EmotionLabel, f1_scores(preds, truths, "per_class")):
            print(f"{lab.display}\t{score:.4f}")
    else:
        print(f"{args.averaging} F1 {f1_scores(preds, truths, args.averaging):.4f} over {cm.total} samples")
    zero = cm.zero_division_classes()
    if zero:
        print(f"zero-division classes (F1 set to 0): {', '.join(lab.display for lab in zero)}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    train_pop = read_jsonl(args.train) if args.train is not None else (args.train_counts or CHALLENGE_TRAIN_COUNTS)
    report = distribution_report(train_pop, args.test_estimate or PROBED_TEST_WEIGHTS)
    text = report.to_csv()
    if args.out is not None:
        atomic_write_text(args.out, text)
        print(f"distribution report -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    result = ablation_run(cfg.ablation_config())
    if args.out is not None:
        result.write_csv(args.out)
    sys.stdout.write(result.to_csv())
    logger.info("ablation finished in %.1f s", result.seconds)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agtfusion",
        description="Audio-guided multimodal emotion fusion: data, training, self-training, voting and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "Generate a seeded synthetic multimodal dataset as JSONL.")
    _add_common(p)
    dest = p.add_mutually_exclusive_group(required=True)
    dest.add_argument("--out", type=Path, help="write one labeled dataset here (this or --out-dir is required)")
    dest.add_argument("--out-dir", type=Path,
                      help="write the reference benchmark as labeled/unlabeled/test.jsonl (this or --out is required)")
    p.add_argument("--counts", type=_label_map, metavar="LABEL=N,...",
                   help="per-class counts for --out (default: challenge training counts)")
    p.add_argument("--widths", type=_int_triple, metavar="A,V,T", help="feature widths (default: 64,64,64)")
    p.add_argument("--noise-sigma", type=float, help="Gaussian noise scale (default: 0.3)")
    p.add_argument("--conflict-rate", type=float, help="probability of one conflicting modality (default: 0.2)")

    p = add("train", cmd_train, "Train one classifier on a labeled JSONL dataset.")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="labeled dataset JSONL")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="agt", help="architecture (default: agt)")
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    p.add_argument("--losses", type=Path, help="per-epoch loss CSV (default: not written)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("predict", cmd_predict, "Write softmax predictions of a saved model.")
    p.add_argument("--model", type=Path, required=True, help="model file")
    p.add_argument("--data", type=Path, required=True, help="dataset JSONL (labels ignored)")
    p.add_argument("--out", type=Path, required=True, help="prediction JSONL to write")
    p.add_argument("--source", help="source tag stored in each record (default: the architecture)")

    p = add("pseudo-label", cmd_pseudo_label, "Keep confident predictions on which all three models agree.")
    _add_common(p)
    p.add_argument("--audio", type=Path, required=True, help="audio-only predictions")
    p.add_argument("--baseline", type=Path, required=True, help="baseline predictions")
    p.add_argument("--agt", type=Path, required=True, help="AGT predictions")
    p.add_argument("--out", type=Path, required=True, help="pseudo-label JSONL to write")
    p.add_argument("--pool", type=Path, help="unlabeled dataset; with it, also write the pseudo-labeled samples (default: none)")
    p.add_argument("--dataset-out", type=Path, help="where to write the pseudo-labeled samples (default: OUT.dataset.jsonl)")
    _add_semisup_flags(p)

    p = add("self-train", cmd_self_train, "Staged pseudo-label self-training of the three models.")
    _add_common(p)
    p.add_argument("--labeled", type=Path, required=True, help="labeled dataset JSONL")
    p.add_argument("--unlabeled", type=Path, required=True, help="unlabeled dataset JSONL")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for models, pseudo-labels and stages.csv")
    p.add_argument("--stages", type=int, help="number of stages, 1 = no pseudo-labels (default: 2)")
    _add_semisup_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("vote", cmd_vote, "Regularized voting over audio-only, baseline and AGT predictions.")
    _add_common(p)
    p.add_argument("--audio", type=Path, required=True, help="audio-only predictions")
    p.add_argument("--baseline", type=Path, required=True, help="baseline predictions")
    p.add_argument("--agt", type=Path, required=True, help="AGT predictions")
    p.add_argument("--out", type=Path, required=True, help="final label JSONL to write")
    p.add_argument("--report", type=Path, help="branch/selection CSV (default: not written)")
    _add_vote_flags(p)

    p = add("eval", cmd_eval, "Score predicted labels against a labeled dataset.")
    p.add_argument("--preds", type=Path, required=True, help="JSONL with id and label (predictions or vote output)")
    p.add_argument("--truth", type=Path, required=True, help="labeled dataset JSONL")
    p.add_argument("--averaging", choices=AVERAGINGS, default="weighted", help="F1 averaging (default: weighted)")
    p.add_argument("--report", type=Path, help="per-class F1 CSV (default: not written)")

    p = add("report", cmd_report, "Train vs test-estimate label distribution CSV.")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--train", type=Path, help="labeled dataset JSONL to count (default: use --train-counts)")
    src.add_argument("--train-counts", type=_label_map, metavar="LABEL=N,...",
                     help="explicit train counts (default: challenge training counts)")
    p.add_argument("--test-estimate", type=_label_map, metavar="LABEL=W,...",
                   help="unnormalised test weights (default: probed test-set weights)")
    p.add_argument("--out", type=Path, help="CSV to write (default: stdout)")

    p = add("ablate", cmd_ablate, "Run the feature x model x strategy grid and write the F1 table.")
    _add_common(p)
    p.add_argument("--out", type=Path, help="table CSV to write, also echoed to stdout (default: stdout only)")
    p.add_argument("--models", type=_csv_list, help="subset of baseline,agt (default: both)")
    p.add_argument("--strategies", type=_csv_list, help="subset of N,P,P+V (default: all)")
    p.add_argument("--features", type=_csv_list, help="feature sets over a,v,t, each containing a (default: avt)")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_semisup_flags(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"agtfusion {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, NonFiniteError, OSError) as exc:
        print(f"agtfusion {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AgtFusionError as exc:
        print(f"agtfusion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
