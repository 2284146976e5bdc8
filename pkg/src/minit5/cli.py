"""Command-line entry point wiring the library together.

Subcommands: tokenizer-train, dedup, pretrain, finetune, evaluate, budget.
Every option can also be supplied via a JSON config file (--config);
explicit flags win over the file, unknown config keys are rejected.
Artifacts are written to a temp file and renamed, so a failed run leaves
nothing half-written.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import tempfile

import numpy as np

from . import bpe, dedup, evaluation, noising, tasks, training
from .model import PRESETS, budget_table, init_params, preset, training_budget_ratio
from .tensor import LossError, ShapeError, Tape, backward


class UsageError(ValueError):
    pass


_DATA_ERRORS = (
    bpe.TokenizerError,
    noising.NoisingError,
    tasks.TaskFormatError,
    tasks.DatasetError,
    training.TrainingError,
    training.CheckpointError,
    evaluation.EvalError,
    ShapeError,
    LossError,
    OSError,
    UnicodeDecodeError,
    json.JSONDecodeError,
)
_NUMERICAL_ERRORS = (training.NumericalError, FloatingPointError, ZeroDivisionError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# option name -> (default, type, help); None default means required
_COMMON = {
    "config": (None, str, "JSON config file; explicit flags override its values"),
    "seed": (0, int, "root random seed"),
}

_SPECS = {
    "tokenizer-train": {
        "corpus": (None, str, "input text file (UTF-8, blank-line paragraphs)"),
        "vocab_out": ("vocab.txt", str, "output vocabulary file"),
        "merges_out": (None, str, "output merges file (default: <vocab_out>.merges)"),
        "vocab_size": (32000, int, "total vocabulary size"),
        "sentinel_count": (100, int, "reserved sentinel tokens at the top of the id space"),
    },
    "dedup": {
        "input": (None, str, "input text file (UTF-8, blank-line paragraphs)"),
        "output": (None, str, "deduplicated output file"),
        "stats_out": (None, str, "stats file (default: <output>.stats)"),
        "ngram": (10, int, "shingle order in words"),
        "threshold": (0.5, float, "drop a paragraph when more than this fraction of its shingles was seen"),
        "vocab": (None, str, "optional vocabulary file for token counts"),
    },
    "pretrain": {
        "corpus": (None, str, "training text file"),
        "vocab": (None, str, "vocabulary file"),
        "output_dir": (None, str, "directory for checkpoints and the training log"),
        "steps": (1000, int, "optimizer steps (full-scale reference: 1000000)"),
        "batch_tokens": (4096, int, "token budget per batch"),
        "seq_len": (128, int, "tokens per pretraining sequence before noising"),
        "lr": (0.01, float, "peak learning rate"),
        "warmup": (10000, int, "linear warmup steps before inverse-sqrt decay"),
        "noise_density": (0.15, float, "fraction of tokens corrupted by span corruption"),
        "mean_span": (3.0, float, "mean corrupted-span length in tokens"),
        "mix": (0.5, float, "probability of span corruption vs i.i.d. denoising"),
        "iid_rate": (0.15, float, "per-token corruption probability for i.i.d. denoising"),
        "checkpoint_every": (500, int, "save a checkpoint every N steps"),
        "preset": ("tiny", str, f"model preset, one of {sorted(PRESETS)}"),
        "dropout": (0.1, float, "dropout rate during training"),
    },
    "finetune": {
        "train": (None, str, "training CSV (input, target)"),
        "validation": (None, str, "validation CSV used for checkpoint selection"),
        "vocab": (None, str, "vocabulary file"),
        "task": (None, str, f"task tag, one of {sorted(evaluation.DECODE_LIMITS)}"),
        "init": (None, str, "checkpoint to start from (default: fresh parameters)"),
        "output_dir": (None, str, "directory for per-epoch checkpoints and the selection report"),
        "epochs": (None, int, "fine-tuning epochs (default: per-task table)"),
        "batch_examples": (64, int, "examples per batch"),
        "lr": (1e-4, float, "constant learning rate"),
        "max_output_tokens": (None, int, "decode budget for validation scoring (default: per-task table)"),
        "preset": ("tiny", str, "model preset when --init is not given"),
        "dropout": (0.1, float, "dropout rate during training"),
    },
    "evaluate": {
        "dataset": (None, str, "evaluation CSV (input, target)"),
        "vocab": (None, str, "vocabulary file"),
        "checkpoint": (None, str, "model checkpoint"),
        "task": (None, str, f"task tag, one of {sorted(evaluation.DECODE_LIMITS)}"),
        "output_dir": (None, str, "directory for report.txt, report.kv and predictions.csv"),
        "max_output_tokens": (None, int, "decode budget (default: per-task table)"),
    },
    "budget": {
        "steps": (None, int, "optimizer steps for a custom ratio"),
        "batch_tokens": (None, int, "tokens per batch for a custom ratio"),
        "params": (None, int, "parameter count for a custom ratio"),
    },
}

_REQUIRED = {
    "tokenizer-train": ("corpus",),
    "dedup": ("input", "output"),
    "pretrain": ("corpus", "vocab", "output_dir"),
    "finetune": ("train", "validation", "vocab", "task", "output_dir"),
    "evaluate": ("dataset", "vocab", "checkpoint", "task", "output_dir"),
    "budget": (),
}


def _build_parser():
    parser = _Parser(prog="minit5", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, spec in _SPECS.items():
        p = sub.add_parser(command, description=f"{command} options")
        for name, (default, typ, help_text) in {**_COMMON, **spec}.items():
            shown = "required" if name in _REQUIRED[command] else f"default: {default}"
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ,
                           default=None, help=f"{help_text} ({shown})")
    return parser


def _resolve_config(args, command):
    """defaults < config file < explicit flags; unknown keys are an error."""
    spec = {**_COMMON, **_SPECS[command]}
    cfg = {name: default for name, (default, _, _) in spec.items()}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as f:
            try:
                file_cfg = json.load(f)
            except json.JSONDecodeError as e:
                raise UsageError(f"{args.config}: invalid JSON ({e})") from e
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(spec))
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {unknown}")
        cfg.update(file_cfg)
    for name in spec:
        value = getattr(args, name)
        if value is not None:
            cfg[name] = value
    for name in _REQUIRED[command]:
        if cfg.get(name) is None:
            raise UsageError(f"{command}: missing required option --{name.replace('_', '-')}")
    cfg.pop("config", None)
    return cfg


def _model_config(preset_name, vocab_size, dropout):
    return preset(preset_name, vocab_size=vocab_size, dropout=dropout)


def _cmd_tokenizer_train(cfg):
    with open(cfg["corpus"], encoding="utf-8") as f:
        vocab = bpe.train_bpe(f.read().splitlines(), cfg["vocab_size"], cfg["sentinel_count"])
    merges_out = cfg["merges_out"] or cfg["vocab_out"] + ".merges"
    os.makedirs(os.path.dirname(os.path.abspath(cfg["vocab_out"])), exist_ok=True)
    tmp_vocab = cfg["vocab_out"] + ".tmp"
    tmp_merges = merges_out + ".tmp"
    try:
        bpe.save_vocab(vocab, tmp_vocab, tmp_merges)
        os.replace(tmp_vocab, cfg["vocab_out"])
        os.replace(tmp_merges, merges_out)
    except BaseException:
        for tmp in (tmp_vocab, tmp_merges):
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    print(f"trained vocabulary of {len(vocab)} tokens "
          f"({len(vocab.merges)} merges, {vocab.sentinel_count} sentinels)")
    print(f"wrote {cfg['vocab_out']} and {merges_out}")
    return 0


def _cmd_dedup(cfg):
    vocab = bpe.load_vocab(cfg["vocab"]) if cfg["vocab"] else None
    kept, stats = dedup.deduplicate_stream(
        dedup.read_paragraphs(cfg["input"]), n=cfg["ngram"], threshold=cfg["threshold"], vocab=vocab
    )
    directory = os.path.dirname(os.path.abspath(cfg["output"])) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        with open(tmp, "w", encoding="utf-8") as out:
            first = True
            for p in kept:
                if not first:
                    out.write("\n")
                out.write(p.text.rstrip("\n") + "\n")
                first = False
        os.replace(tmp, cfg["output"])
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    stats_out = cfg["stats_out"] or cfg["output"] + ".stats"
    _atomic_write_text(stats_out, "\n".join(stats.to_lines()) + "\n")
    print(stats.render_table())
    return 0


def _sequence_stream(corpus_path, vocab, seq_len):
    """Endless stream of fixed-length id sequences over the corpus."""
    def chunks():
        while True:
            buf = []
            usable = False
            for p in dedup.read_paragraphs(corpus_path):
                buf.extend(bpe.encode(p.text, vocab, append_eos=True))
                while len(buf) >= seq_len:
                    yield buf[:seq_len]
                    buf = buf[seq_len:]
                    usable = True
            if len(buf) >= 2:
                yield buf
                usable = True
            if not usable:
                raise tasks.DatasetError(f"{corpus_path}: corpus too small to pretrain on")
    return chunks()


def _cmd_pretrain(cfg):
    if cfg["seq_len"] < 2:
        raise UsageError("pretrain: --seq-len must be at least 2")
    vocab = bpe.load_vocab(cfg["vocab"])
    model_cfg = _model_config(cfg["preset"], len(vocab), cfg["dropout"])
    rng = np.random.default_rng(cfg["seed"])
    params = init_params(model_cfg, np.random.default_rng(cfg["seed"]))
    opt = training.AdamW(params, lr=cfg["lr"])
    os.makedirs(cfg["output_dir"], exist_ok=True)
    log_path = os.path.join(cfg["output_dir"], "training.log")
    saved_steps = set()

    def save(step):
        ck = training.Checkpoint.from_model(model_cfg, params, step=step, optimizer=opt, rng=rng)
        training.save_checkpoint(os.path.join(cfg["output_dir"], f"ckpt-{step:08d}.bin"), ck)
        saved_steps.add(step)

    stats = noising.StreamStats()
    pairs = noising.noise_stream(
        _sequence_stream(cfg["corpus"], vocab, cfg["seq_len"]), vocab, rng, stats=stats,
        mix=cfg["mix"], noise_density=cfg["noise_density"], mean_span=cfg["mean_span"],
        iid_prob=cfg["iid_rate"],
    )
    batches = training.token_batch_pack(pairs, cfg["batch_tokens"])
    tokens_seen = 0
    save(0)
    with open(log_path, "w", encoding="utf-8") as log:
        for step, batch in enumerate(itertools.islice(batches, cfg["steps"]), start=1):
            lr = training.lr_schedule(step, cfg["lr"], cfg["warmup"])
            with Tape() as tape:
                loss = training.teacher_forced_loss(model_cfg, params, batch, train=True, rng=rng)
                backward(loss, tape)
            opt.step(lr=lr)
            opt.zero_grad()
            tokens_seen += sum(len(p.input_ids) + len(p.target_ids) for p in batch)
            line = f"{step}, {loss.item():.6f}, {lr:.8f}, {tokens_seen}"
            log.write(line + "\n")
            if step % 50 == 0 or step == cfg["steps"]:
                print(line)
            if cfg["checkpoint_every"] and step % cfg["checkpoint_every"] == 0:
                save(step)
    if cfg["steps"] not in saved_steps:
        save(cfg["steps"])
    if stats.skipped_short:
        print(f"skipped {stats.skipped_short} sequences too short to noise")
    print(f"done: {cfg['steps']} steps, {tokens_seen} tokens")
    return 0


def _encode_examples(examples, vocab):
    encoded = []
    for ex in examples:
        encoded.append(
            noising.NoisedPair(
                bpe.encode(ex.input_text, vocab, append_eos=True),
                bpe.encode(ex.target_text, vocab, append_eos=True),
                objective="task",
            )
        )
    return encoded


def _cmd_finetune(cfg):
    task = cfg["task"]
    if task not in evaluation.DECODE_LIMITS:
        raise UsageError(f"unknown task {task!r}; choose from {sorted(evaluation.DECODE_LIMITS)}")
    vocab = bpe.load_vocab(cfg["vocab"])
    epochs = cfg["epochs"] if cfg["epochs"] is not None else evaluation.FINETUNE_EPOCHS[task]
    max_out = cfg["max_output_tokens"] if cfg["max_output_tokens"] is not None else evaluation.DECODE_LIMITS[task]
    train_examples = tasks.load_csv_dataset(cfg["train"], task)
    val_examples = tasks.load_csv_dataset(cfg["validation"], task)
    if not train_examples:
        raise tasks.DatasetError(f"{cfg['train']}: no training examples")
    if not val_examples:
        raise tasks.DatasetError(f"{cfg['validation']}: no validation examples")
    if cfg["init"]:
        start = training.load_checkpoint(cfg["init"])
        model_cfg = start.config
        if model_cfg.vocab_size != len(vocab):
            raise UsageError(
                f"checkpoint vocabulary size {model_cfg.vocab_size} does not match "
                f"{cfg['vocab']} ({len(vocab)} tokens)"
            )
        params = start.to_params()
    else:
        model_cfg = _model_config(cfg["preset"], len(vocab), cfg["dropout"])
        params = init_params(model_cfg, np.random.default_rng(cfg["seed"]))
    encoded = _encode_examples(train_examples, vocab)
    opt = training.AdamW(params, lr=cfg["lr"])
    rng = np.random.default_rng(cfg["seed"] + 1)
    os.makedirs(cfg["output_dir"], exist_ok=True)
    checkpoints = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(encoded))
        for lo in range(0, len(encoded), cfg["batch_examples"]):
            batch = [encoded[i] for i in order[lo : lo + cfg["batch_examples"]]]
            with Tape() as tape:
                loss = training.teacher_forced_loss(model_cfg, params, batch, train=True, rng=rng)
                backward(loss, tape)
            opt.step()
            opt.zero_grad()
        ck = training.Checkpoint.from_model(model_cfg, params, step=epoch)
        training.save_checkpoint(os.path.join(cfg["output_dir"], f"epoch-{epoch:03d}.bin"), ck)
        checkpoints.append(ck)
        print(f"epoch {epoch}/{epochs}: loss {loss.item():.4f}")
    best, scores = training.select_best_checkpoint(checkpoints, val_examples, vocab,
                                                   max_output_tokens=max_out)
    best_epoch = checkpoints.index(best) + 1
    training.save_checkpoint(os.path.join(cfg["output_dir"], "best.bin"), best)
    lines = [f"epoch-{i + 1:03d} rouge_l={s:.6f}" for i, s in enumerate(scores)]
    lines.append(f"selected=epoch-{best_epoch:03d}")
    _atomic_write_text(os.path.join(cfg["output_dir"], "selection.txt"), "\n".join(lines) + "\n")
    print(f"selected epoch {best_epoch} (validation ROUGE-L {scores[best_epoch - 1]:.4f})")
    return 0


def _cmd_evaluate(cfg):
    task = cfg["task"]
    if task not in evaluation.DECODE_LIMITS:
        raise UsageError(f"unknown task {task!r}; choose from {sorted(evaluation.DECODE_LIMITS)}")
    vocab = bpe.load_vocab(cfg["vocab"])
    ck = training.load_checkpoint(cfg["checkpoint"])
    examples = tasks.load_csv_dataset(cfg["dataset"], task)
    report = evaluation.evaluate_examples(
        ck.config, ck.to_params(), vocab, examples, task,
        max_output_tokens=cfg["max_output_tokens"],
    )
    evaluation.write_report(report, cfg["output_dir"])
    print(report.render())
    return 0


def _cmd_budget(cfg):
    rows = budget_table()
    if cfg["steps"] is not None or cfg["batch_tokens"] is not None or cfg["params"] is not None:
        if None in (cfg["steps"], cfg["batch_tokens"], cfg["params"]):
            raise UsageError("budget: --steps, --batch-tokens and --params must be given together")
        ratio = training_budget_ratio(cfg["steps"], cfg["batch_tokens"], cfg["params"])
        rows = rows + [("custom", cfg["steps"], cfg["batch_tokens"], cfg["params"],
                        cfg["steps"] * cfg["batch_tokens"], ratio)]
    header = f"{'configuration':<14} {'steps':>9} {'batch_tokens':>12} {'params':>12} {'tokens':>14} {'ratio':>8}"
    print(header)
    for name, steps, batch_tokens, n_params, tokens, ratio in rows:
        print(f"{name:<14} {steps:>9} {batch_tokens:>12} {n_params:>12} {tokens:>14} {ratio:>8.2f}")
    return 0


_COMMANDS = {
    "tokenizer-train": _cmd_tokenizer_train,
    "dedup": _cmd_dedup,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "budget": _cmd_budget,
}


def main(argv=None):
    threads = os.environ.get("MINIT5_THREADS")
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        cfg = _resolve_config(args, args.command)
        return _COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
