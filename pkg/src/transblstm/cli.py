"""Command-line entry point: ``transblstm <command> [flags]``.

Commands: gen-corpus, pretrain, finetune, eval, count-params, gradcheck, plot.
Model settings resolve as preset, then ``--config`` JSON file, then flags,
later sources overriding earlier ones. Every command that writes files also
writes ``run_config.json`` with the fully resolved settings.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .audit import REFERENCE_TOTALS_M, count_params_analytic, reported_configs
from .checks import block_gradcheck
from .data import (
    Corpus,
    SyntheticSpec,
    TokenizedCorpus,
    Vocab,
    gen_synthetic_corpus,
    make_classification_task,
    make_span_task,
)
from .data.vocab import SPECIAL_TOKENS
from .encoder import PRESETS, ModelConfig, blstm_hidden_for
from .errors import TransBlstmError
from .training import (
    DESK_FINETUNE,
    DESK_PRETRAIN,
    FinetuneHyper,
    PretrainHyper,
    Pretrainer,
    evaluate_pretrain,
    evaluate_task,
    finetune_loop,
    load_checkpoint,
    pretrain_model_from_checkpoint,
    read_metrics,
    save_checkpoint,
    task_model_from_checkpoint,
)

log = logging.getLogger("transblstm")

BLSTM_FLAG = {"none": "none", "replace": "replace_ffn", "parallel": "parallel_sum", "pure": "pure_blstm"}
BLOCK_FLAG = {"trans": "none", "trans-blstm-1": "replace_ffn", "trans-blstm-2": "parallel_sum",
              "pure-blstm": "pure_blstm"}

# training defaults per preset: desk-sized for toy/small, reference otherwise
PRESET_PRETRAIN = {
    "toy": dict(DESK_PRETRAIN),
    "small": dict(batch_size=32, max_len=128, lr=1e-3),
    "base": {},
    "large": {},
}
PRESET_FINETUNE = {"toy": dict(DESK_FINETUNE), "small": dict(lr=1e-3), "base": {}, "large": {}}

CORPUS_FILE = "corpus.txt"
VOCAB_FILE = "vocab.txt"
SIDECAR = "run_config.json"


class HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show every flag's default; unset optional flags read "(default: none)"
    unless their help already explains what an unset value means."""

    def _get_help_string(self, action: argparse.Action) -> str:
        text = action.help or ""
        if "(default:" in text or action.default is argparse.SUPPRESS:
            return text
        if action.default is None:
            return text if action.required or not action.option_strings else text + " (default: none)"
        return super()._get_help_string(action)


class UsageError(TransBlstmError):
    """Bad command-line input detected after argument parsing."""


# --------------------------------------------------------------------------- parser

def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model (flags override --config, which overrides the preset)")
    g.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="size preset")
    g.add_argument("--config", type=Path, help="JSON file with 'model' and 'hyper' sections (default: none)")
    g.add_argument("--layers", type=int, help="number of encoder layers (default: from preset)")
    g.add_argument("--hidden", type=int, help="hidden size H (default: from preset)")
    g.add_argument("--heads", type=int, help="attention heads (default: from preset)")
    g.add_argument("--ff-width", type=int, help="feed-forward inner width (default: from preset)")
    g.add_argument("--blstm", choices=sorted(BLSTM_FLAG),
                   help="BLSTM placement: replace=TRANS-BLSTM-1, parallel=TRANS-BLSTM-2 (default: none)")
    g.add_argument("--blstm-hidden", choices=("full", "half"),
                   help="BLSTM hidden width H or H/2 (default: full)")
    g.add_argument("--vocab-size", type=int, help="vocabulary size V (default: from preset or corpus)")
    g.add_argument("--max-positions", type=int, help="position table size P (default: from preset)")
    g.add_argument("--dropout", type=float, help="dropout rate (default: 0.1)")


def _seed_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice")


def build_parser() -> argparse.ArgumentParser:
    fmt = HelpFormatter
    parser = argparse.ArgumentParser(prog="transblstm", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-corpus", help="write the synthetic template corpus and its vocabulary",
                       formatter_class=fmt)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--vocab-size", type=int, default=100, help="vocabulary size including reserved tokens")
    p.add_argument("--documents", type=int, default=200, help="number of documents")
    _seed_flag(p)

    p = sub.add_parser("pretrain", help="MLM + NSP pretraining", formatter_class=fmt)
    p.add_argument("--corpus", type=Path, required=True,
                   help=f"directory holding {CORPUS_FILE} and {VOCAB_FILE} (or the corpus file itself)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    _model_flags(p)
    p.add_argument("--steps", type=int, help="total optimizer steps (default: 2000)")
    p.add_argument("--batch", type=int, help="batch size (default: 32 for toy/small, 256 otherwise)")
    p.add_argument("--lr", type=float, help="peak learning rate (default: 5e-3 toy, 1e-3 small, 1e-4 otherwise)")
    p.add_argument("--max-len", type=int, help="max sequence length (default: 32 toy, 128 small, 256 otherwise)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N steps (0: end only)")
    p.add_argument("--record-time", action="store_true",
                   help="fill the ms column with wall time (makes metrics non-reproducible)")
    p.add_argument("--no-plot", action="store_true", help="skip the loss-curve figure")
    _seed_flag(p)

    p = sub.add_parser("finetune", help="fine-tune a pretrained checkpoint on a synthetic task",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", type=Path, required=True, help="pretraining checkpoint")
    p.add_argument("--task", choices=("span", "classify"), required=True, help="task head")
    p.add_argument("--decoder", choices=("linear", "blstm2"), default="linear",
                   help="span decoder: linear map or two BLSTM layers then linear")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=2, help="training epochs")
    p.add_argument("--batch", type=int, default=12, help="batch size")
    p.add_argument("--lr", type=float, help="peak learning rate (default: 1e-2 toy, 1e-3 small, 3e-5 otherwise)")
    p.add_argument("--examples", type=int, default=2000, help="synthetic training examples")
    p.add_argument("--seq-len", type=int, default=16, help="synthetic sequence body length")
    p.add_argument("--num-classes", type=int, default=2, help="classes for the classify task")
    p.add_argument("--record-time", action="store_true", help="fill the ms column with wall time")
    p.add_argument("--no-plot", action="store_true", help="skip the loss-curve figure")
    _seed_flag(p)

    p = sub.add_parser("eval", help="evaluate a pretraining or fine-tuned checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint to evaluate")
    p.add_argument("--corpus", type=Path, help="corpus directory (pretraining checkpoints)")
    p.add_argument("--batches", type=int, default=10, help="evaluation batches (pretraining)")
    p.add_argument("--batch", type=int, default=32, help="batch size")
    p.add_argument("--max-len", type=int, help="max sequence length (default: from checkpoint)")
    p.add_argument("--examples", type=int, default=2000, help="synthetic task examples (fine-tuned)")
    p.add_argument("--seq-len", type=int, default=16, help="synthetic sequence body length (fine-tuned)")
    _seed_flag(p)

    p = sub.add_parser("count-params", help="analytic parameter audit", formatter_class=fmt)
    _model_flags(p)
    p.add_argument("--reported", action="store_true",
                   help="audit all six reference configurations instead of one")
    p.add_argument("--json", action="store_true", help="print the machine-readable record only")
    p.add_argument("--out", type=Path, help="directory for the TSV table and bar chart")

    p = sub.add_parser("gradcheck", help="finite-difference check of one encoder block",
                       formatter_class=fmt)
    _model_flags(p)
    p.add_argument("--block", choices=sorted(BLOCK_FLAG), default="trans-blstm-2", help="block type")
    p.add_argument("--seq-len", type=int, default=4, help="sequence length")
    p.add_argument("--batch", type=int, default=2, help="batch size")
    p.add_argument("--max-coords", type=int, default=64, help="entries checked per tensor")
    p.add_argument("--tol", type=float, default=1e-4, help="pass threshold on max relative error")
    _seed_flag(p)

    p = sub.add_parser("plot", help="loss curves from one or more metrics files", formatter_class=fmt)
    p.add_argument("metrics", type=Path, nargs="+", help="metrics TSV files")
    p.add_argument("--labels", nargs="+", help="legend labels (default: parent directory names)")
    p.add_argument("--field", choices=("total", "mlm", "nsp"), default="total", help="loss column")
    p.add_argument("--window", type=int, default=50, help="moving-average window")
    p.add_argument("--out", type=Path, required=True, help="output image file")
    return parser


# --------------------------------------------------------------------------- config

def _read_config_file(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(data, dict) or set(data) - {"model", "hyper"}:
        raise UsageError(f"config file {path} must be an object with 'model' and/or 'hyper' sections")
    return data


def resolve_model(args: argparse.Namespace, file_cfg: dict[str, Any],
                  vocab_size: int | None = None) -> ModelConfig:
    """Preset, then config file, then flags."""
    fields: dict[str, Any] = dict(PRESETS[args.preset])
    from_file = dict(file_cfg.get("model", {}))
    fields.update(from_file)
    flag_map = {"layers": "num_layers", "hidden": "hidden", "heads": "num_heads", "ff_width": "ff_width",
                "vocab_size": "vocab_size", "max_positions": "max_positions", "dropout": "dropout"}
    for flag, name in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            fields[name] = value
    if args.blstm is not None:
        fields["blstm_mode"] = BLSTM_FLAG[args.blstm]
    if args.vocab_size is None and "vocab_size" not in from_file and vocab_size is not None:
        fields["vocab_size"] = vocab_size
    if args.blstm_hidden is not None:
        fields["blstm_hidden"] = blstm_hidden_for(fields["hidden"], args.blstm_hidden)
    elif "blstm_hidden" not in from_file:
        fields["blstm_hidden"] = blstm_hidden_for(fields["hidden"], "full")
    try:
        return ModelConfig.from_dict(fields)
    except TypeError as err:
        raise UsageError(f"bad model config: {err}") from None


def _write_sidecar(out: Path, command: str, resolved: dict[str, Any]) -> None:
    payload = {"command": command, "version": __version__, **resolved}
    (out / SIDECAR).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _corpus_paths(path: Path) -> tuple[Path, Path]:
    if path.is_dir():
        return path / CORPUS_FILE, path / VOCAB_FILE
    return path, path.with_name(VOCAB_FILE)


def _load_corpus(path: Path) -> tuple[TokenizedCorpus, Vocab]:
    corpus_file, vocab_file = _corpus_paths(path)
    for f in (corpus_file, vocab_file):
        if not f.is_file():
            raise UsageError(f"corpus input {f} does not exist")
    vocab = Vocab.load(vocab_file)
    return TokenizedCorpus.build(Corpus.load(corpus_file), vocab), vocab


def _placeholder_vocab(size: int) -> Vocab:
    """Task data needs only token ids; names do not matter."""
    return Vocab(list(SPECIAL_TOKENS) + [f"t{i}" for i in range(size - len(SPECIAL_TOKENS))])


def _task_data(task: str, vocab: Vocab, n: int, seq_len: int, num_classes: int, seed: int):
    rng = np.random.default_rng([seed, 7])
    if task == "classify":
        return make_classification_task(vocab, n, seq_len, num_classes, rng)
    return make_span_task(vocab, n, seq_len, rng)


def _print_rows(rows: list[tuple[str, Any]]) -> None:
    for key, value in rows:
        print(f"{key}\t{value}")


# --------------------------------------------------------------------------- commands

def cmd_gen_corpus(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(vocab_size=args.vocab_size, num_documents=args.documents)
    syn = gen_synthetic_corpus(spec, np.random.default_rng(args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    syn.corpus.save(args.out / CORPUS_FILE)
    syn.vocab.save(args.out / VOCAB_FILE)
    _write_sidecar(args.out, "gen-corpus", {"seed": args.seed, "synthetic": vars(spec)})
    _print_rows([("documents", len(syn.corpus.documents)), ("vocab_size", len(syn.vocab)),
                 ("corpus", args.out / CORPUS_FILE)])
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    file_cfg = _read_config_file(args.config)
    corpus, vocab = _load_corpus(args.corpus)
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        trainer = Pretrainer.from_checkpoint(ckpt, corpus, vocab)
        cfg, hyper = trainer.config, trainer.hyper
        if args.steps is not None:
            hyper.steps = args.steps
    else:
        cfg = resolve_model(args, file_cfg, vocab_size=len(vocab))
        hyper_fields = {**PRESET_PRETRAIN[args.preset], **file_cfg.get("hyper", {})}
        for flag, name in (("steps", "steps"), ("batch", "batch_size"), ("lr", "lr"), ("max_len", "max_len")):
            if getattr(args, flag) is not None:
                hyper_fields[name] = getattr(args, flag)
        hyper_fields.update(seed=args.seed, checkpoint_every=args.checkpoint_every,
                            record_time=args.record_time)
        try:
            hyper = PretrainHyper(**hyper_fields)
        except TypeError as err:
            raise UsageError(f"bad hyper section: {err}") from None
        trainer = Pretrainer(cfg, corpus, vocab, hyper)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_sidecar(args.out, "pretrain", {"model": cfg.to_dict(), "hyper": hyper.to_dict(),
                                          "corpus": str(args.corpus)})
    metrics_path = args.out / "metrics.tsv"
    if args.checkpoint is None and metrics_path.exists():
        metrics_path.unlink()
    trainer.run(metrics_path=metrics_path, checkpoint_path=args.out / "checkpoint.tbk")
    records = read_metrics(metrics_path)
    if not args.no_plot:
        from .plotting import plot_loss_curves
        plot_loss_curves({cfg.blstm_mode: records}, args.out / "loss.png")
    rows = [("steps", trainer.step), ("checkpoint", args.out / "checkpoint.tbk"), ("metrics", metrics_path)]
    if records:
        rows[1:1] = [("initial_loss", records[0].total), ("final_loss", records[-1].total)]
    _print_rows(rows)
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ModelConfig.from_dict(ckpt.config)
    preset_name = next((k for k, v in PRESETS.items()
                        if all(ckpt.config.get(f) == x for f, x in v.items() if f != "vocab_size")), "base")
    lr = args.lr if args.lr is not None else PRESET_FINETUNE[preset_name].get("lr", FinetuneHyper.lr)
    hyper = FinetuneHyper(lr=lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                          decoder=args.decoder, num_classes=args.num_classes, record_time=args.record_time)
    vocab = _placeholder_vocab(cfg.vocab_size)
    data = _task_data(args.task, vocab, args.examples, args.seq_len, args.num_classes, args.seed)
    if data.token_ids.shape[1] > cfg.max_positions:
        raise UsageError(f"--seq-len {args.seq_len} exceeds the model's {cfg.max_positions} positions")
    result = finetune_loop(ckpt, args.task, data, hyper)
    score = evaluate_task(result.model, data)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_sidecar(args.out, "finetune", {
        "model": result.checkpoint.config, "hyper": hyper.to_dict(), "task": args.task,
        "examples": args.examples, "seq_len": args.seq_len, "checkpoint": str(args.checkpoint)})
    with open(args.out / "finetune_metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("step\tepoch\tloss\tlr\tms\n")
        for r in result.records:
            fh.write(f"{r.step}\t{r.epoch}\t{r.loss!r}\t{r.lr!r}\t{r.ms!r}\n")
    save_checkpoint(result.checkpoint, args.out / "finetune.tbk")
    if not args.no_plot:
        from .plotting import plot_task_loss
        plot_task_loss(result.records, args.out / "finetune_loss.png")
    metric = "exact_match" if args.task == "span" else "accuracy"
    _print_rows([("task", args.task), ("decoder", args.decoder), ("steps", len(result.records)),
                 (f"train_{metric}", score), ("checkpoint", args.out / "finetune.tbk")])
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    kind = ckpt.extra.get("kind")
    if kind == "finetune":
        model = task_model_from_checkpoint(ckpt)
        vocab = _placeholder_vocab(model.config.vocab_size)
        task = ckpt.extra["task"]
        data = _task_data(task, vocab, args.examples, args.seq_len, ckpt.extra.get("num_classes", 2), args.seed)
        metric = "exact_match" if task == "span" else "accuracy"
        _print_rows([("task", task), (metric, evaluate_task(model, data, args.batch))])
        return 0
    if args.corpus is None:
        raise UsageError("--corpus is required to evaluate a pretraining checkpoint")
    corpus, vocab = _load_corpus(args.corpus)
    model = pretrain_model_from_checkpoint(ckpt)
    max_len = args.max_len or ckpt.hyper.get("max_len", model.config.max_positions)
    scores = evaluate_pretrain(model, corpus, vocab, args.seed, args.batches, args.batch, max_len)
    _print_rows([("step", ckpt.step)] + [(k, float(v)) for k, v in scores.items()])
    return 0


def cmd_count_params(args: argparse.Namespace) -> int:
    if args.reported:
        reports = {k: count_params_analytic(c) for k, c in reported_configs().items()}
        print("config\ttotal\tmillions\treference_millions\trelative_diff\tencoder_only_millions")
        for key, rep in reports.items():
            size, arch = key.split("/")
            ref = REFERENCE_TOTALS_M[(size, arch)]
            print(f"{key}\t{rep.total}\t{rep.total / 1e6:.2f}\t{ref}\t"
                  f"{(rep.total / 1e6 - ref) / ref:+.4f}\t{rep.encoder_total / 1e6:.2f}")
    else:
        cfg = resolve_model(args, _read_config_file(args.config))
        rep = count_params_analytic(cfg)
        reports = {cfg.blstm_mode: rep}
        if args.json:
            print(rep.to_json())
        else:
            print(rep.to_table())
            print(rep.to_json())
    if args.out is not None:
        from .plotting import plot_param_counts
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "params.tsv", "w", encoding="utf-8") as fh:
            names = [n for n, _ in next(iter(reports.values())).rows()]
            fh.write("config\t" + "\t".join(names) + "\n")
            for key, rep in reports.items():
                fh.write(key + "\t" + "\t".join(str(v) for _, v in rep.rows()) + "\n")
        plot_param_counts(reports, args.out / "params.png")
        _write_sidecar(args.out, "count-params",
                       {"configs": {k: r.config for k, r in reports.items()}})
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.blstm is None:
        args.blstm = next(k for k, v in BLSTM_FLAG.items() if v == BLOCK_FLAG[args.block])
    cfg = resolve_model(args, _read_config_file(args.config))
    result = block_gradcheck(cfg, args.batch, args.seq_len, args.seed, args.max_coords)
    status = "pass" if result.max_error < args.tol else "fail"
    _print_rows([("block", args.block), ("max_relative_error", f"{result.max_error:.3e}"),
                 ("worst_tensor", result.worst), ("status", status)])
    return 0 if status == "pass" else 1


def cmd_plot(args: argparse.Namespace) -> int:
    from .plotting import plot_loss_curves
    labels = args.labels or [p.parent.name or p.stem for p in args.metrics]
    if len(labels) != len(args.metrics):
        raise UsageError("--labels needs one label per metrics file")
    runs = {}
    for label, path in zip(labels, args.metrics):
        try:
            runs[label] = read_metrics(path)
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot read metrics {path}: {err}") from None
    plot_loss_curves(runs, args.out, window=args.window, field=args.field)
    _print_rows([("figure", args.out)])
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "count-params": cmd_count_params,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TransBlstmError as err:
        parser.print_usage(sys.stderr)
        print(f"transblstm {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
