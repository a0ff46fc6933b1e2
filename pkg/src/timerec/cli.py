"""Command-line surface: preprocess, pretrain, train, evaluate, recommend."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as dp
from . import glove as gv
from . import metrics as mt
from .config import RunConfig, dataset_preset, load_config_file
from .model import Batch, ModelConfig, TimeAwareModel

TRAIN_FILE = "train.tsv"
VALID_FILE = "valid.tsv"
TEST_FILE = "test.tsv"
VOCAB_FILE = "vocab.json"
STATS_FILE = "stats.json"
REJECTS_FILE = "rejects.log"

INIT_TABLE_KEY = "item_embedding.init"


def _model_variant(config: RunConfig) -> str:
    if not config.use_self_attention and not config.use_time_attention:
        return "timerec-noattn"
    if not config.use_self_attention:
        return "timerec-noself"
    if not config.use_time_attention:
        return "timerec-notime"
    return "timerec"


def build_config(args: argparse.Namespace) -> RunConfig:
    """Preset for the dataset, then config file values, then CLI overrides."""
    dataset = getattr(args, "dataset", None) or "canonical"
    fraction = getattr(args, "fraction", None) or "full"
    values = dataset_preset(dataset, fraction).as_dict()
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    values["dataset"] = dataset
    values["fraction"] = fraction
    overrides = {
        "embedding_dim": "embedding_dim", "glove_epochs": "glove_epochs",
        "glove_window": "glove_window", "theta_multiplier": "theta_multiplier",
        "epochs": "epochs", "batch_size": "batch_size", "dropout": "dropout",
        "decay_step": "decay_step", "lr": "lr", "seed": "seed",
        "loss": "loss_mode", "dtype": "dtype", "l2": "l2",
        "test_boundary_days": "test_boundary_days",
    }
    for arg_name, field_name in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            values[field_name] = value
    if getattr(args, "no_self_attention", False):
        values["use_self_attention"] = False
    if getattr(args, "no_time_attention", False):
        values["use_time_attention"] = False
    if getattr(args, "share_gru_weights", False):
        values["share_gru_weights"] = True
    if getattr(args, "deterministic", None) is not None:
        values["deterministic"] = args.deterministic
    known = {f.name for f in fields(RunConfig)}
    values = {k: v for k, v in values.items() if k in known}
    return RunConfig.from_dict(values)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    config = build_config(args)
    raw_path = Path(args.input)
    if not raw_path.exists():
        print(f"error: input file not found: {raw_path}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rejects = dp.RejectLog()
    if config.dataset == "yoochoose":
        rows = dp.yoochoose_rows(raw_path, rejects)
    elif config.dataset == "diginetica":
        rows = dp.diginetica_rows(raw_path, rejects)
    else:
        rows = _canonical_rows(raw_path, rejects)
    sessions = dp.parse_events(rows, rejects)
    sessions = dp.filter_corpus(sessions, config.min_item_support, config.min_session_len)
    train, test = dp.split_chronological(sessions, config.test_boundary_days * dp.SECONDS_PER_DAY)

    denom = config.fraction_denominator()
    if denom > 1:
        train = dp.take_last_fraction(train, denom)
        test = dp.restrict_to_items(test, {e.item_id for s in train for e in s.events})

    vocab = dp.Vocabulary.build(train)
    train_idx = dp.reindex_sessions(train, vocab)
    test_idx = dp.reindex_sessions(test, vocab)
    fit, valid = dp.split_validation(train_idx, config.validation_fraction)

    dp.write_canonical(fit, out_dir / TRAIN_FILE)
    dp.write_canonical(valid, out_dir / VALID_FILE)
    dp.write_canonical(test_idx, out_dir / TEST_FILE)
    with open(out_dir / VOCAB_FILE, "w", encoding="utf-8") as fh:
        json.dump(vocab.as_dict(), fh, sort_keys=True)
    if len(rejects):
        rejects.write(out_dir / REJECTS_FILE)

    stats = {
        "train": dp.CorpusStats.from_sessions(train_idx).as_dict(),
        "fit": dp.CorpusStats.from_sessions(fit).as_dict(),
        "validation": dp.CorpusStats.from_sessions(valid).as_dict(),
        "test": dp.CorpusStats.from_sessions(test_idx).as_dict(),
        "rejected_rows": len(rejects),
        "fraction": config.fraction,
    }
    with open(out_dir / STATS_FILE, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)

    for split in ("train", "test"):
        s = stats[split]
        print(f"{split}: {s['n_clicks']} clicks, {s['n_sequences']} sequences, "
              f"{s['n_items']} items, {s['avg_session_length']:.2f} clicks/session, "
              f"{s['avg_samples_per_session']:.2f} sequences/session")
    print(f"rejected rows: {len(rejects)}")
    print(f"wrote {out_dir / TRAIN_FILE}, {out_dir / VALID_FILE}, {out_dir / TEST_FILE}")
    return 0


def _canonical_rows(path: Path, rejects: dp.RejectLog):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                rejects.add("short_row", line)
                continue
            yield parts[0], parts[1], parts[2]


def _load_vocab(data_dir: Path) -> dp.Vocabulary:
    with open(data_dir / VOCAB_FILE, "r", encoding="utf-8") as fh:
        return dp.Vocabulary.from_dict(json.load(fh))


def cmd_pretrain(args) -> int:
    config = build_config(args)
    data_dir = Path(args.data)
    train_path = data_dir / TRAIN_FILE
    if not train_path.exists():
        print(f"error: canonical train file not found: {train_path}", file=sys.stderr)
        return 2
    sessions = dp.read_canonical(train_path)
    vocab = _load_vocab(data_dir)

    mean_gap = gv.average_interval(sessions)
    theta = config.theta_multiplier * mean_gap
    print(f"mean interval {mean_gap:.3f}s, theta = {theta:.3f}s")

    subsessions = []
    for s in sessions:
        subsessions.extend(gv.split_subsessions(s, theta))
    window = config.glove_window or gv.max_session_length(sessions)
    matrix = gv.build_cooccurrence(subsessions, window, config.cooccurrence_weighting)
    print(f"{len(subsessions)} sub-sessions, {len(matrix)} co-occurrence entries, "
          f"window {window}")

    table = gv.train_glove(matrix, len(vocab), config.embedding_dim,
                           epochs=config.glove_epochs, seed=config.seed)
    ckpt.save_checkpoint(
        args.out, config=config.as_dict(), vocab=vocab.as_dict(), theta=theta,
        epoch=0, rng_state=None, tensors={INIT_TABLE_KEY: table},
        dtype="f8" if config.dtype == "float64" else "f4",
        extra={"stage": "pretrain"})
    print(f"embedding table {table.shape} written to {args.out}")
    return 0


def _model_from_tensors(config: RunConfig, n_items: int, tensors: dict,
                        steps: dict) -> TimeAwareModel:
    mc = ModelConfig(
        n_items=n_items, dim=config.embedding_dim,
        use_self_attention=config.use_self_attention,
        use_time_attention=config.use_time_attention,
        dropout_rate=config.dropout, share_gru_weights=config.share_gru_weights,
        loss_mode=config.loss_mode, dtype=config.dtype)
    model = TimeAwareModel(mc, np.random.default_rng(0))
    dt = mc.numpy_dtype()
    for p in model.params:
        if p.name not in tensors:
            raise ckpt.CheckpointError(f"checkpoint missing tensor {p.name!r}")
        p.value[...] = tensors[p.name].astype(dt)
        p.adam_m[...] = tensors[f"{p.name}.adam_m"].astype(dt)
        p.adam_v[...] = tensors[f"{p.name}.adam_v"].astype(dt)
        p.step = int(steps.get(p.name, 0))
    return model


def _checkpoint_tensors(model: TimeAwareModel, init_table: np.ndarray) -> dict:
    tensors = {INIT_TABLE_KEY: init_table}
    for p in model.params:
        tensors[p.name] = p.value
        tensors[f"{p.name}.adam_m"] = p.adam_m
        tensors[f"{p.name}.adam_v"] = p.adam_v
    return tensors


def _evaluate_model(model: TimeAwareModel, samples, k: int, name: str,
                    dataset: str) -> mt.MetricsReport:
    def score(sample):
        return model.scores(sample.prefix, sample.before_intervals, sample.after_intervals)
    return mt.evaluate_scorer(score, samples, k, name, dataset)


def cmd_train(args) -> int:
    config = build_config(args)
    data_dir = Path(args.data)
    for name in (TRAIN_FILE, VALID_FILE):
        if not (data_dir / name).exists():
            print(f"error: canonical file not found: {data_dir / name}", file=sys.stderr)
            return 2
    fit = dp.read_canonical(data_dir / TRAIN_FILE)
    valid = dp.read_canonical(data_dir / VALID_FILE)
    vocab = _load_vocab(data_dir)
    n_items = len(vocab)
    fit_samples = dp.expand_corpus(fit)
    valid_samples = dp.expand_corpus(valid)
    k = min(20, n_items)

    theta = None
    start_epoch = 0
    if args.resume:
        header, tensors = ckpt.load_checkpoint(args.resume)
        config = RunConfig.from_dict(header["config"])
        theta = header["theta"]
        start_epoch = header["epoch"]
        model = _model_from_tensors(config, n_items, tensors, header["steps"])
        init_table = tensors[INIT_TABLE_KEY]
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = header["rng_state"]
        best = header["extra"].get("best_val_recall", -1.0)
    else:
        init_table = None
        if args.init:
            header, tensors = ckpt.load_checkpoint(args.init)
            theta = header["theta"]
            init_table = tensors[INIT_TABLE_KEY].astype(
                np.float64 if config.dtype == "float64" else np.float32)
            if init_table.shape != (n_items, config.embedding_dim):
                print(f"error: init table shape {init_table.shape} does not match "
                      f"({n_items}, {config.embedding_dim})", file=sys.stderr)
                return 2
        rng = np.random.default_rng(config.seed)
        mc = ModelConfig(
            n_items=n_items, dim=config.embedding_dim,
            use_self_attention=config.use_self_attention,
            use_time_attention=config.use_time_attention,
            dropout_rate=config.dropout, share_gru_weights=config.share_gru_weights,
            loss_mode=config.loss_mode, dtype=config.dtype)
        model = TimeAwareModel(mc, rng, item_init=init_table)
        if init_table is None:
            init_table = model.params["item_embedding"].value.copy()
        best = -1.0

    out_path = Path(args.out)
    best_path = Path(str(out_path) + ".best")
    dtype_flag = "f8" if config.dtype == "float64" else "f4"

    for epoch in range(start_epoch + 1, config.epochs + 1):
        lr = config.learning_rate_for_epoch(epoch)
        order = rng.permutation(len(fit_samples))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            batch_samples = [fit_samples[i] for i in order[lo:lo + config.batch_size]]
            batch = Batch.from_samples(batch_samples)
            epoch_loss += model.train_step(batch, lr, rng=rng, l2=config.l2,
                                           batch_id=f"epoch{epoch}:{lo}")
            n_batches += 1
        val = _evaluate_model(model, valid_samples, k, _model_variant(config), "validation")
        print(f"epoch {epoch:3d}  lr {lr:.2e}  loss {epoch_loss / max(n_batches, 1):.4f}  "
              f"val Recall@{k} {val.recall:.4f}  MRR@{k} {val.mrr:.4f}")
        extra = {"stage": "train", "variant": _model_variant(config),
                 "best_val_recall": max(best, val.recall)}
        ckpt.save_checkpoint(
            out_path, config=config.as_dict(), vocab=vocab.as_dict(), theta=theta,
            epoch=epoch, rng_state=rng.bit_generator.state,
            tensors=_checkpoint_tensors(model, init_table),
            steps={p.name: p.step for p in model.params},
            dtype=dtype_flag, extra=extra)
        if val.recall > best:
            best = val.recall
            best_path.write_bytes(out_path.read_bytes())
    print(f"final checkpoint: {out_path}")
    print(f"best-validation checkpoint: {best_path}")
    return 0


def _load_model(path: str):
    header, tensors = ckpt.load_checkpoint(path)
    config = RunConfig.from_dict(header["config"])
    vocab = dp.Vocabulary.from_dict(header["vocab"])
    model = _model_from_tensors(config, len(vocab), tensors, header["steps"])
    return header, config, vocab, model


def cmd_evaluate(args) -> int:
    if not Path(args.checkpoint).exists():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 2
    header, config, vocab, model = _load_model(args.checkpoint)
    test_path = Path(args.test)
    if not test_path.exists():
        print(f"error: canonical test file not found: {test_path}", file=sys.stderr)
        return 2
    test_samples = dp.expand_corpus(dp.read_canonical(test_path))
    n_items = len(vocab)
    k = min(args.k, n_items)

    train_dir = Path(args.train_data) if args.train_data else Path(config.data_dir)
    train_sessions = []
    for name in (TRAIN_FILE, VALID_FILE):
        path = train_dir / name
        if path.exists():
            train_sessions.extend(dp.read_canonical(path))
    if not train_sessions:
        print(f"error: no canonical train data under {train_dir} "
              f"(needed for baseline scorers)", file=sys.stderr)
        return 2

    dataset_name = config.dataset if config.dataset != "canonical" else test_path.stem
    reports = [_evaluate_model(model, test_samples, k,
                               header["extra"].get("variant", "timerec"), dataset_name)]
    for name, scorer in (("pop", mt.PopScorer(train_sessions, n_items)),
                         ("s-pop", mt.SessionPopScorer(train_sessions, n_items)),
                         ("item-knn", mt.ItemKnnScorer(train_sessions, n_items))):
        reports.append(mt.evaluate_scorer(scorer.score, test_samples, k, name, dataset_name))

    table = mt.format_report(reports)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    print()
    print(mt.format_summary(reports), end="")
    return 0


def cmd_recommend(args) -> int:
    if not Path(args.checkpoint).exists():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 2
    header, config, vocab, model = _load_model(args.checkpoint)
    stream = open(args.input, "r", encoding="utf-8") if args.input else sys.stdin
    events = []
    try:
        for line in stream:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                print(f"error: expected 'item_id timestamp', got {line!r}", file=sys.stderr)
                return 2
            raw_item, ts = parts
            if raw_item not in vocab:
                print(f"error: unknown item id {raw_item!r}", file=sys.stderr)
                return 2
            events.append(dp.Event(vocab.index(raw_item), int(ts)))
    finally:
        if args.input:
            stream.close()
    if not events:
        print("error: no session events on input", file=sys.stderr)
        return 2
    events.sort(key=lambda e: e.timestamp)
    prefix = [e.item_id for e in events]
    deltas = [events[j + 1].timestamp - events[j].timestamp for j in range(len(events) - 1)]
    before = [None] + deltas
    after = deltas + [None]
    cache = model.forward(prefix, before, after, train=False)
    probs = cache["probs"]
    k = min(args.k, len(vocab))
    for item in mt.rank_items(cache["scores"], k):
        print(f"{vocab.raw(item)}\t{probs[item]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument("--glove-epochs", dest="glove_epochs", type=int)
    p.add_argument("--glove-window", dest="glove_window", type=int)
    p.add_argument("--theta-multiplier", dest="theta_multiplier", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--decay-step", dest="decay_step", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-self-attention", dest="no_self_attention", action="store_true")
    p.add_argument("--no-time-attention", dest="no_time_attention", action="store_true")
    p.add_argument("--share-gru-weights", dest="share_gru_weights", action="store_true")
    p.add_argument("--loss", choices=("categorical", "literal"))
    p.add_argument("--dtype", choices=("float64", "float32"))
    p.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    p.add_argument("--test-boundary-days", dest="test_boundary_days", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timerec",
        description="Session-based, time-aware next-item recommender")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw click log -> canonical event files")
    p.add_argument("--input", required=True, help="raw log file")
    p.add_argument("--dataset", choices=("yoochoose", "diginetica", "canonical"),
                   default="canonical")
    p.add_argument("--fraction", choices=("1/64", "1/4", "full"), default="full")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="co-occurrence embedding pretraining")
    p.add_argument("--data", required=True, help="directory from preprocess")
    p.add_argument("--dataset", choices=("yoochoose", "diginetica", "canonical"),
                   default="canonical")
    p.add_argument("--fraction", choices=("1/64", "1/4", "full"), default="full")
    p.add_argument("--out", required=True, help="output embedding checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the session model")
    p.add_argument("--data", required=True, help="directory from preprocess")
    p.add_argument("--dataset", choices=("yoochoose", "diginetica", "canonical"),
                   default="canonical")
    p.add_argument("--fraction", choices=("1/64", "1/4", "full"), default="full")
    p.add_argument("--init", help="pretrained embedding checkpoint")
    p.add_argument("--resume", help="continue from a training checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint plus baselines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="canonical test file")
    p.add_argument("--train-data", dest="train_data",
                   help="directory with canonical train data for the baselines")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", help="write the report table here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k items for a session on stdin")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--input", help="read session events from this file instead of stdin")
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (dp.EmptyCorpusError, ckpt.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
