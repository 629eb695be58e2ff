"""Command-line entry point: prepare, train, extract-topics, evaluate, coherence.

Every run writes a resolved-config snapshot into its output directory;
rerunning from that snapshot reproduces the outputs bit for bit.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy import sparse

from . import corpus as corpus_mod
from . import encoder as encoder_mod
from . import evaluate as evaluate_mod
from . import mutual as mutual_mod
from . import ntm as ntm_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_config_file, write_snapshot
from .corpus import Vocabulary
from .nn import SeededRng
from .topics import write_topic_report

logger = logging.getLogger(__name__)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_config(args) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    overrides = {
        key: getattr(args, key)
        for key in vars(args)
        if hasattr(cfg, key) and getattr(args, key) is not None
    }
    if getattr(args, "no_topics", False):
        overrides["use_topics"] = False
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def _prepare_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "prepared"


def cmd_prepare(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.data:
        print("prepare: --data (or a config data= entry) is required", file=sys.stderr)
        return 2
    out = _prepare_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)

    records = corpus_mod.load_tsv(cfg.data)
    if not records:
        print(f"prepare: no usable records in {cfg.data}", file=sys.stderr)
        return 1
    examples = corpus_mod.examples_from_records(records)
    vocab = corpus_mod.build_vocabulary(records, cfg.vocab_max_size)
    enc_vocab = encoder_mod.build_encoder_vocab(
        records, cfg.enc_vocab_max_size, ntm_vocab=vocab
    )
    bows = corpus_mod.vectorize_all([ex.tokens for ex in examples], vocab)
    log_freq = ntm_mod.compute_log_freq(bows)

    vocab.to_tsv(out / "vocab.tsv")
    enc_vocab.to_tsv(out / "encoder_vocab.tsv")
    save_checkpoint(
        out / "bows.bin",
        {
            "data": bows.data,
            "indices": bows.indices,
            "indptr": bows.indptr,
            "shape": np.array(bows.shape),
            "log_freq": log_freq,
        },
        meta={"kind": "bow-cache"},
    )
    with open(out / "examples.jsonl", "w", encoding="utf-8") as fh:
        for record, ex in zip(records, examples):
            fh.write(
                json.dumps(
                    {
                        "target": ex.target,
                        "label": ex.label,
                        "role": record.split_tag,
                        "tokens": list(ex.tokens),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    write_snapshot(cfg, out / "config.resolved")

    manifest = {
        "examples": len(examples),
        "label_counts": corpus_mod.label_counts(records),
        "target_counts": dict(sorted(corpus_mod.target_counts(records).items())),
        "vocab_size": vocab.size,
        "encoder_vocab_size": enc_vocab.size,
        "checksums": {
            name: _sha256(out / name)
            for name in ("vocab.tsv", "encoder_vocab.tsv", "bows.bin", "examples.jsonl")
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"prepared {len(examples)} examples -> {out}")
    return 0


def _load_prepared(cfg: RunConfig):
    out = _prepare_dir(cfg)
    if not (out / "manifest.json").exists():
        raise FileNotFoundError(f"no prepared data under {out}; run `prepare` first")
    vocab = Vocabulary.from_tsv(out / "vocab.tsv")
    enc_vocab = Vocabulary.from_tsv(out / "encoder_vocab.tsv")
    arrays, _ = load_checkpoint(out / "bows.bin")
    bows = sparse.csr_matrix(
        (arrays["data"], arrays["indices"], arrays["indptr"]),
        shape=tuple(arrays["shape"]),
    )
    records = corpus_mod.load_tsv(cfg.data)
    return records, vocab, enc_vocab, bows, arrays["log_freq"]


def _init_models(cfg: RunConfig, vocab_size: int, enc_vocab_size: int, log_freq, seed: int):
    ntm_cfg = ntm_mod.NtmConfig(
        vocab_size=vocab_size,
        num_topics=cfg.num_topics,
        latent_dim=cfg.latent_dim,
        hidden_dim=cfg.ntm_hidden_dim,
    )
    enc_cfg = encoder_mod.EncoderConfig(
        vocab_size=enc_vocab_size,
        emb_dim=cfg.emb_dim,
        hidden_dim=cfg.encoder_hidden_dim,
        output_dim=cfg.encoder_output_dim,
    )
    root = SeededRng(seed)
    ntm = ntm_mod.init_ntm(ntm_cfg, log_freq, root.child(10))
    enc = encoder_mod.init_encoder(enc_cfg, root.child(11))
    return ntm, enc


def _schedule(cfg: RunConfig, seed: int) -> mutual_mod.TrainSchedule:
    return mutual_mod.TrainSchedule(
        max_iterations=cfg.iterations,
        ntm_epochs=cfg.ntm_epochs,
        classifier_epochs=cfg.classifier_epochs,
        batch_size=cfg.batch_size,
        seed=seed,
        patience=cfg.patience,
        kl_warmup_epochs=cfg.kl_warmup_epochs,
    )


def _split_for_mode(cfg: RunConfig, args, records, examples):
    if args.mode == "cross_target":
        if not args.held_out:
            raise ValueError("--held-out TARGET is required in cross_target mode")
        return corpus_mod.make_cross_target_split(records, args.held_out)
    folds = corpus_mod.make_in_target_folds(examples, cfg.folds, cfg.seed)
    if not 0 <= args.fold < cfg.folds:
        raise ValueError(f"--fold must be in [0, {cfg.folds})")
    return folds[args.fold]


def _train_one(cfg: RunConfig, split, vocab, enc_vocab, log_freq, seed: int):
    data = mutual_mod.TrainData.from_split(
        split, vocab, enc_vocab, corpus_mod.vectorize_all
    )
    ntm, enc = _init_models(cfg, vocab.size, enc_vocab.size, log_freq, seed)
    result = mutual_mod.train_alternating(
        ntm,
        enc,
        data,
        _schedule(cfg, seed),
        gamma=cfg.gamma,
        lr_ntm=cfg.lr_ntm,
        lr_classifier=cfg.lr_classifier,
        n_top_terms=cfg.n_top_terms,
        ratio_p=cfg.ratio_p,
        use_topics=cfg.use_topics,
        max_len=cfg.max_len,
    )
    return result


def _checkpoint_arrays(result) -> dict[str, np.ndarray]:
    arrays = {f"ntm/{k}": v for k, v in result.ntm.params.items()}
    arrays["ntm/log_freq"] = result.ntm.log_freq
    arrays.update({f"enc/{k}": v for k, v in result.enc.params.items()})
    if result.proj_params is not None:
        arrays.update({f"proj/{k}": v for k, v in result.proj_params.items()})
    return arrays


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    records, vocab, enc_vocab, bows, log_freq = _load_prepared(cfg)
    examples = corpus_mod.examples_from_records(records)
    split = _split_for_mode(cfg, args, records, examples)

    run_name = (
        f"cross_{args.held_out.replace(' ', '_')}"
        if args.mode == "cross_target"
        else f"fold_{args.fold}"
    )
    out = Path(cfg.out_dir) / "train" / run_name
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "config.resolved")

    result = _train_one(cfg, split, vocab, enc_vocab, log_freq, cfg.seed)

    save_checkpoint(
        out / "checkpoint.bin",
        _checkpoint_arrays(result),
        meta={
            "seed": cfg.seed,
            "mode": args.mode,
            "run": run_name,
            "iterations_run": result.stopped_at_iteration,
            "step_counters": {
                "ntm": result.ntm_steps,
                "classifier": result.classifier_steps,
            },
            "num_topics": cfg.num_topics,
            "vocab_size": vocab.size,
            "encoder_vocab_size": enc_vocab.size,
        },
    )
    corpus_mod.write_split_jsonl(split, out / "split.jsonl")
    mutual_mod.history_to_csv(result.history, out / "history.csv")
    ntm_mod.export_topic_word_tsv(result.ntm, vocab, out / "topic_word.tsv")
    topics_rows = sorted(result.topics_by_target.items())
    if topics_rows:
        write_topic_report(out / "topics.tsv", topics_rows)

    test_inputs = mutual_mod.build_inputs(
        split.test, result.topics_by_target, enc_vocab, cfg.max_len, cfg.use_topics
    )
    preds = encoder_mod.predict(result.enc, test_inputs)
    probs = [
        encoder_mod.classify(result.enc, encoder_mod.encode(result.enc, x)).probabilities
        for x in test_inputs
    ]
    encoder_mod.write_predictions(out / "predictions.tsv", split.test, preds, probs)
    report = evaluate_mod.metric_report(
        evaluate_mod.confusion([ex.label for ex in split.test], preds)
    )
    evaluate_mod.report_to_csv(out / "metrics.csv", [(run_name, report)])
    print(f"trained {run_name}: test macro F1 {report.macro_f1:.4f} -> {out}")
    return 0


def _oracle_train_fn(split, seed):
    def predict_fn(examples):
        return [ex.label for ex in examples]

    return predict_fn


def _majority_train_fn(split, seed):
    from collections import Counter

    majority = Counter(ex.label for ex in split.train).most_common(1)[0][0]

    def predict_fn(examples):
        return [majority for _ in examples]

    return predict_fn


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    records, vocab, enc_vocab, bows, log_freq = _load_prepared(cfg)
    examples = corpus_mod.examples_from_records(records)
    out = Path(cfg.out_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "config.resolved")

    if args.predictor == "oracle":
        train_fn = _oracle_train_fn
    elif args.predictor == "majority":
        train_fn = _majority_train_fn
    else:

        def train_fn(split, seed):
            result = _train_one(cfg, split, vocab, enc_vocab, log_freq, cfg.seed + seed)

            def predict_fn(test_examples):
                inputs = mutual_mod.build_inputs(
                    test_examples,
                    result.topics_by_target,
                    enc_vocab,
                    cfg.max_len,
                    cfg.use_topics,
                )
                return encoder_mod.predict(result.enc, inputs)

            return predict_fn

    if args.protocol == "in_target":
        averaged, reports = evaluate_mod.run_in_target(
            train_fn, examples, k=cfg.folds, seed=cfg.seed
        )
        rows = [(f"fold_{i}", rep) for i, rep in enumerate(reports)]
    else:
        averaged, per_target = evaluate_mod.run_cross_target(train_fn, records)
        rows = sorted(per_target.items())
    evaluate_mod.report_to_csv(out / f"{args.protocol}_metrics.csv", rows, averaged)
    print(
        f"{args.protocol} ({args.predictor}): macro F1 {averaged.macro_f1:.4f} "
        f"over {len(rows)} runs -> {out}"
    )
    return 0


def cmd_extract_topics(args) -> int:
    cfg = _resolve_config(args)
    records, vocab, enc_vocab, bows, log_freq = _load_prepared(cfg)
    arrays, meta = load_checkpoint(args.checkpoint)
    ntm_cfg = ntm_mod.NtmConfig(
        vocab_size=vocab.size,
        num_topics=meta["num_topics"],
        latent_dim=cfg.latent_dim,
        hidden_dim=cfg.ntm_hidden_dim,
    )
    ntm = ntm_mod.NtmParams(
        ntm_cfg,
        {k.split("/", 1)[1]: v for k, v in arrays.items()
         if k.startswith("ntm/") and k != "ntm/log_freq"},
        arrays["ntm/log_freq"],
    )
    enc_cfg = encoder_mod.EncoderConfig(
        vocab_size=enc_vocab.size,
        emb_dim=cfg.emb_dim,
        hidden_dim=cfg.encoder_hidden_dim,
        output_dim=cfg.encoder_output_dim,
    )
    enc = encoder_mod.EncoderParams(
        enc_cfg,
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("enc/")},
    )
    examples = corpus_mod.examples_from_records(records)
    data = mutual_mod.TrainData(
        examples=examples, bows=None, vocab=vocab, enc_vocab=enc_vocab
    )
    targets = sorted({ex.target for ex in examples})
    topics = mutual_mod.extract_topics_for_targets(
        ntm, enc, data, targets, cfg.n_top_terms, cfg.ratio_p
    )
    out = Path(args.out or (Path(cfg.out_dir) / "topics.tsv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_topic_report(out, sorted(topics.items()))
    print(f"extracted topics for {len(topics)} targets -> {out}")
    return 0


def cmd_coherence(args) -> int:
    cfg = _resolve_config(args)
    records, vocab, enc_vocab, bows, log_freq = _load_prepared(cfg)
    cutoffs = tuple(int(c) for c in args.cutoffs.split(","))

    weights: dict[int, list[tuple[float, str]]] = {}
    with open(args.topics, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "topic\tword\tweight":
            raise ValueError(f"{args.topics}: not a topic_word.tsv export")
        for line in fh:
            topic, word, weight = line.rstrip("\n").split("\t")
            weights.setdefault(int(topic), []).append((float(weight), word))
    top_words = {
        topic: [w for _, w in sorted(rows, key=lambda t: (-t[0], t[1]))[: max(cutoffs)]]
        for topic, rows in weights.items()
    }
    docs = [
        corpus_mod.tokenize(r.sentence, mode="ntm") for r in records
    ]
    report = evaluate_mod.coherence_report(
        top_words, docs, window=cfg.npmi_window, cutoffs=cutoffs
    )
    out = Path(args.out or (Path(cfg.out_dir) / "coherence.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    means = " ".join(f"@{c}={report.averaged[c]:.4f}" for c in cutoffs)
    print(f"NPMI {means} -> {out}")
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", help="corpus TSV path")
    p.add_argument("--out-dir", dest="out_dir", help="run output directory")
    p.add_argument("--vocab-max-size", dest="vocab_max_size", type=int)
    p.add_argument("--enc-vocab-max-size", dest="enc_vocab_max_size", type=int)
    p.add_argument("--num-topics", dest="num_topics", type=int, help="K")
    p.add_argument("--gamma", type=float, help="mutual-learning weight")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-classifier", dest="lr_classifier", type=float)
    p.add_argument("--lr-ntm", dest="lr_ntm", type=float)
    p.add_argument("--n-top-terms", dest="n_top_terms", type=int)
    p.add_argument("--ratio-p", dest="ratio_p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--ntm-epochs", dest="ntm_epochs", type=int)
    p.add_argument("--classifier-epochs", dest="classifier_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--kl-warmup-epochs", dest="kl_warmup_epochs", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--ntm-hidden-dim", dest="ntm_hidden_dim", type=int)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.add_argument("--encoder-hidden-dim", dest="encoder_hidden_dim", type=int)
    p.add_argument("--encoder-output-dim", dest="encoder_output_dim", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--npmi-window", dest="npmi_window", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument(
        "--no-topics",
        dest="no_topics",
        action="store_true",
        help="disable explainable topics (the -ET ablation)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicarg",
        description="Topic-enhanced sentence-level argument mining",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build vocabularies, BoW cache, and manifests")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="run the alternating trainer on one split")
    _add_config_flags(p)
    p.add_argument("--mode", choices=("in_target_fold", "cross_target"), required=True)
    p.add_argument("--fold", type=int, default=0, help="fold index (in_target_fold)")
    p.add_argument("--held-out", dest="held_out", help="held-out target (cross_target)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="run a full evaluation protocol")
    _add_config_flags(p)
    p.add_argument("--protocol", choices=("in_target", "cross_target"), required=True)
    p.add_argument(
        "--predictor",
        choices=("full", "oracle", "majority"),
        default="full",
        help="oracle/majority are harness self-tests",
    )
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("extract-topics", help="extract topics from a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_extract_topics)

    p = sub.add_parser("coherence", help="NPMI coherence over a topic_word.tsv export")
    _add_config_flags(p)
    p.add_argument("--topics", required=True, help="topic_word.tsv from training")
    p.add_argument("--cutoffs", default="5,10,15,20")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_coherence)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, AssertionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
