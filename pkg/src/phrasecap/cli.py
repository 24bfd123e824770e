"""Command-line pipeline driver.

Subcommands: chunk, train-phrase, refine-corpus, train, generate, eval,
gradcheck.  Options resolve as CLI flags > config file > defaults; the config
file is plain ``key = value`` lines with ``#`` comments.

Exit codes: 0 success, 1 validation failure, 2 I/O error.  Failures print a
single JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, inference, metrics, training
from .corpus import (
    CorpusFormatError,
    TruncationPolicy,
    load_checkpoint,
    load_corpus,
    load_features,
    load_splits,
    save_checkpoint,
    save_pairs,
)
from .model import LossConfig, PhiParams
from .nncore import gradient_check, make_rng
from .phrasing import chunk, select_triplets
from .training import TrainConfig, batch_gradient


class ValidationFailure(Exception):
    pass


CONFIG_KEYS = {
    "learning_rate": float,
    "rmsprop_decay": float,
    "rmsprop_epsilon": float,
    "batch_size": int,
    "epochs": int,
    "stage1_epochs": int,
    "dropout_rate": float,
    "seed": int,
    "hidden_size": int,
    "init_scale": float,
    "clip_norm": float,
    "min_count": int,
    "lambda": float,
    "kappa_phrase": float,
    "kappa_word": float,
    "hinge": str,
    "beam_phrase": int,
    "beam_sentence": int,
    "threshold": float,
    "max_np_len": int,
    "max_slots": int,
    "as_limit": int,
    "np_limit": int,
    "corpus": str,
    "features": str,
    "splits": str,
    "checkpoint": str,
    "output": str,
    "threads": int,
}


def read_config(path):
    """Parse ``key = value`` lines; unknown keys are a validation failure."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationFailure("%s line %d: expected key = value" % (path, lineno))
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValidationFailure("%s line %d: unknown key %r" % (path, lineno, key))
            try:
                out[key] = CONFIG_KEYS[key](value)
            except ValueError:
                raise ValidationFailure(
                    "%s line %d: bad value %r for %s" % (path, lineno, value, key)
                )
    return out


def resolve(args, key, default):
    """flag > config file > default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    cfg = getattr(args, "_config", {})
    if key in cfg:
        return cfg[key]
    return default


def build_train_config(args):
    return TrainConfig(
        learning_rate=resolve(args, "learning_rate", 0.001),
        rmsprop_decay=resolve(args, "rmsprop_decay", 0.9),
        rmsprop_epsilon=resolve(args, "rmsprop_epsilon", 1e-8),
        batch_size=resolve(args, "batch_size", 300),
        epochs=resolve(args, "epochs", 20),
        dropout_rate=resolve(args, "dropout_rate", 0.5),
        seed=resolve(args, "seed", 0),
        hidden_size=resolve(args, "hidden_size", 256),
        init_scale=resolve(args, "init_scale", 0.08),
        clip_norm=resolve(args, "clip_norm", 5.0),
        min_count=resolve(args, "min_count", 5),
    )


def build_loss_config(args):
    return LossConfig(
        lam=resolve(args, "lambda", 0.0),
        kappa_phrase=resolve(args, "kappa_phrase", 1.0),
        kappa_word=resolve(args, "kappa_word", 1.0),
        hinge=resolve(args, "hinge", "sigmoid"),
    )


def build_infer_config(args):
    return inference.InferenceConfig(
        beam_phrase=resolve(args, "beam_phrase", 30),
        beam_sentence=resolve(args, "beam_sentence", 20),
        threshold=resolve(args, "threshold", -1.5),
        max_np_len=resolve(args, "max_np_len", 7),
        max_slots=resolve(args, "max_slots", 20),
    )


def build_policy(args):
    return TruncationPolicy(
        as_limit=resolve(args, "as_limit", 20), np_limit=resolve(args, "np_limit", 7)
    )


def cmd_chunk(args):
    records = load_corpus(resolve(args, "corpus", None) or _missing("corpus"))
    if not records:
        raise ValidationFailure("corpus is empty")
    out_path = resolve(args, "output", None) or _missing("output")
    rel_counts = Counter()
    entries = []
    for r in records:
        for t in select_triplets(r.triplets):
            rel_counts[t.rel] += 1
        entries.append((r.image_id, r.caption, chunk(r.tokens, r.triplets)))
    save_pairs(out_path, entries)
    for rel in sorted(rel_counts):
        print("%s\t%d" % (rel, rel_counts[rel]))
    print("chunked %d records -> %s" % (len(entries), out_path))
    return 0


def _missing(name):
    raise ValidationFailure("missing required option --%s (or config key)" % name)


def _load_training_inputs(args):
    records = load_corpus(resolve(args, "corpus", None) or _missing("corpus"))
    features = load_features(resolve(args, "features", None) or _missing("features"))
    splits = load_splits(resolve(args, "splits", None) or _missing("splits"))
    missing = [r.image_id for r in records if r.image_id not in features]
    if missing:
        raise ValidationFailure("records without features: %s" % missing[:5])
    return records, features, splits


def _log_writer(path):
    fh = open(path, "w", encoding="utf-8")
    t0 = time.monotonic()

    def write(entry):
        entry = dict(entry)
        entry["wallclock"] = round(time.monotonic() - t0, 3)
        fh.write(json.dumps(entry) + "\n")
        fh.flush()

    return write, fh


def cmd_train_phrase(args):
    records, features, splits = _load_training_inputs(args)
    cfg = build_train_config(args)
    if resolve(args, "stage1_epochs", None) is not None:
        cfg.epochs = resolve(args, "stage1_epochs", cfg.epochs)
    loss_cfg = build_loss_config(args)
    by_split = training.split_records(records, splits)
    vocab = training.build_vocab((r.tokens for r in by_split["train"]), cfg.min_count)
    pairs = [(r.image_id, r.caption, chunk(r.tokens, r.triplets)) for r in by_split["train"]]
    out = resolve(args, "checkpoint", None) or _missing("checkpoint")
    log_cb, fh = _log_writer(out + ".log")
    try:
        params, _ = training.train_stage1(pairs, features, vocab, cfg, loss_cfg, log_cb)
    finally:
        fh.close()
    save_checkpoint(params, vocab, out)
    print("stage-1 checkpoint -> %s" % out)
    return 0


def cmd_refine_corpus(args):
    records, features, splits = _load_training_inputs(args)
    params, vocab = load_checkpoint(resolve(args, "checkpoint", None) or _missing("checkpoint"))
    infer_cfg = build_infer_config(args)
    policy = build_policy(args)
    by_split = training.split_records(records, splits)
    pairs = [(r.image_id, r.caption, chunk(r.tokens, r.triplets)) for r in by_split["train"]]
    refined, stats = training.refine_corpus(params, pairs, features, vocab, infer_cfg, policy)
    out = resolve(args, "output", None) or _missing("output")
    save_pairs(out, refined)
    print(
        "refined %d pairs (%d changed, %d truncated = %.2f%%) -> %s"
        % (stats["total"], stats["refined"], stats["truncated"],
           100.0 * stats["truncated"] / max(stats["total"], 1), out)
    )
    return 0


def cmd_train(args):
    records, features, splits = _load_training_inputs(args)
    cfg = build_train_config(args)
    loss_cfg = build_loss_config(args)
    infer_cfg = build_infer_config(args)
    policy = build_policy(args)
    stage1_epochs = resolve(args, "stage1_epochs", cfg.epochs)
    out = resolve(args, "checkpoint", None) or _missing("checkpoint")
    log_cb, fh = _log_writer(out + ".log")
    import dataclasses

    stage1_cfg = dataclasses.replace(cfg, epochs=stage1_epochs)
    by_split = training.split_records(records, splits)
    if not by_split["train"]:
        raise ValidationFailure("no training records selected by the split file")
    try:
        vocab = training.build_vocab((r.tokens for r in by_split["train"]), cfg.min_count)
        pairs = [
            (r.image_id, r.caption, chunk(r.tokens, r.triplets)) for r in by_split["train"]
        ]
        val_pairs = [
            (r.image_id, r.caption, training.truncate(chunk(r.tokens, r.triplets), policy))
            for r in by_split["val"]
            if r.image_id in features
        ]
        stage1, _ = training.train_stage1(pairs, features, vocab, stage1_cfg, loss_cfg, log_cb)
        refined, stats = training.refine_corpus(stage1, pairs, features, vocab, infer_cfg, policy)
        params, _ = training.train_full(
            refined, features, vocab, cfg, loss_cfg, stage1, val_pairs, log_cb
        )
    finally:
        fh.close()
    save_checkpoint(params, vocab, out)
    print(
        "truncation affected %d/%d pairs (%.2f%%)"
        % (stats["truncated"], stats["total"],
           100.0 * stats["truncated"] / max(stats["total"], 1))
    )
    print("checkpoint -> %s" % out)
    return 0


def _generate_split(params, vocab, features, ids, infer_cfg, threads):
    def one(image_id):
        gen = inference.generate_for_image(params, features[image_id], vocab, infer_cfg)
        return {
            "image_id": image_id,
            "caption": " ".join(gen.tokens),
            "score": gen.score,
            "nps_used": [" ".join(np_) for np_ in gen.nps_used],
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, ids))
    return [one(i) for i in ids]


def cmd_generate(args):
    params, vocab = load_checkpoint(resolve(args, "checkpoint", None) or _missing("checkpoint"))
    features = load_features(resolve(args, "features", None) or _missing("features"))
    infer_cfg = build_infer_config(args)
    threads = resolve(args, "threads", 1)
    out = resolve(args, "output", None) or _missing("output")
    split_path = resolve(args, "splits", None)
    if split_path:
        ids = load_splits(split_path)[args.split]
    else:
        ids = sorted(features)
    missing = [i for i in ids if i not in features]
    if missing:
        raise ValidationFailure("ids without features: %s" % missing[:5])
    sweep = args.sweep
    if sweep:
        rows = []
        for t_value in sweep:
            cfg_t = inference.InferenceConfig(
                beam_phrase=infer_cfg.beam_phrase,
                beam_sentence=infer_cfg.beam_sentence,
                threshold=t_value,
                max_np_len=infer_cfg.max_np_len,
                max_slots=infer_cfg.max_slots,
            )
            outputs = _generate_split(params, vocab, features, ids, cfg_t, threads)
            rows.append(
                {
                    "threshold": t_value,
                    "n_distinct": len({o["caption"] for o in outputs}),
                    "pct_unique": 100.0 * len({o["caption"] for o in outputs}) / len(outputs),
                }
            )
        with open(out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        print("threshold sweep -> %s" % out)
        return 0
    outputs = _generate_split(params, vocab, features, ids, infer_cfg, threads)
    with open(out, "w", encoding="utf-8") as fh:
        for row in outputs:
            fh.write(json.dumps(row) + "\n")
    print("generated %d captions -> %s" % (len(outputs), out))
    return 0


def _load_caption_jsonl(path, key):
    rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows[str(obj["image_id"])] = str(obj[key]).split()
            except (json.JSONDecodeError, KeyError) as e:
                raise CorpusFormatError("%s line %d: %s" % (path, lineno, e))
    return rows


def cmd_eval(args):
    generated = _load_caption_jsonl(args.generated, "caption")
    refs = load_corpus(args.references)
    train = load_corpus(args.train_captions) if args.train_captions else refs
    by_image = {}
    for r in refs:
        by_image.setdefault(r.image_id, []).append(r.tokens)
    cands, ref_lists = [], []
    for image_id, tokens in sorted(generated.items()):
        if image_id not in by_image:
            raise ValidationFailure("no references for image %s" % image_id)
        cands.append(tokens)
        ref_lists.append(by_image[image_id])
    report = metrics.evaluate(
        cands, ref_lists, [r.tokens for r in train],
        use_brevity_penalty=args.brevity_penalty,
    )
    out = resolve(args, "output", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    print(report.to_table())
    return 0


def cmd_gradcheck(args):
    rng = make_rng(args.seed)
    k, d, v = args.k, args.d, args.v
    params = PhiParams.init(k, d, v, rng, scale=0.5)
    feature = rng.uniform(-2.0, 2.0, size=d)
    from .model import EncodedExample, total_cost

    word_ids = [int(rng.integers(4, v)) for _ in range(6)]
    ex = EncodedExample(
        "probe",
        feature,
        [("p", 0), ("w", word_ids[0]), ("p", 1), ("w", word_ids[1])],
        [[word_ids[2], word_ids[3]], [word_ids[4], word_ids[5]]],
    )
    loss_cfg = LossConfig(lam=args.lam)
    end_id = 2
    grads, _, _ = batch_gradient(params, [ex], end_id, loss_cfg)
    tensors = params.tensors()
    result = gradient_check(
        lambda: total_cost([ex], params, loss_cfg, end_id), tensors, grads, args.epsilon
    )
    print(
        "max relative error %.3e at %s%s (analytic %.6e, numeric %.6e)"
        % (result.max_rel_error, result.worst_param, result.worst_index,
           result.analytic, result.numeric)
    )
    if result.max_rel_error >= args.tolerance:
        raise ValidationFailure(
            "gradient check failed: %.3e >= %.0e" % (result.max_rel_error, args.tolerance)
        )
    print("gradient check passed (tolerance %.0e)" % args.tolerance)
    return 0


def _add_common(p, *names):
    if "config" in names:
        p.add_argument("--config", help="key = value config file")
    if "corpus" in names:
        p.add_argument("--corpus", help="corpus.jsonl path")
    if "features" in names:
        p.add_argument("--features", help="features.jsonl path")
    if "splits" in names:
        p.add_argument("--splits", help="splits.json path")
    if "checkpoint" in names:
        p.add_argument("--checkpoint", help="checkpoint path")
    if "output" in names:
        p.add_argument("--out", dest="output", help="output path")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated floats")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="phrasecap",
        description="Phrase-first hierarchical caption pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    train_flags = [
        ("--learning-rate", float, "RMSprop learning rate (default 0.001)"),
        ("--rmsprop-decay", float, "squared-gradient decay (default 0.9)"),
        ("--rmsprop-epsilon", float, "denominator epsilon (default 1e-8)"),
        ("--batch-size", int, "minibatch size (default 300)"),
        ("--epochs", int, "training epochs (default 20)"),
        ("--stage1-epochs", int, "phrase-decoder epochs (default: epochs)"),
        ("--dropout-rate", float, "hidden-state dropout (default 0.5)"),
        ("--seed", int, "run seed (default 0)"),
        ("--hidden-size", int, "LSTM hidden size K (default 256)"),
        ("--init-scale", float, "uniform init half-width (default 0.08)"),
        ("--clip-norm", float, "global gradient norm cap, 0 = off (default 5.0)"),
        ("--min-count", int, "vocabulary minimum count (default 5)"),
        ("--lambda", float, "L2 coefficient (default 0)"),
        ("--kappa-phrase", float, "indication weight, phrase steps (default 1)"),
        ("--kappa-word", float, "indication weight, word steps (default 1)"),
    ]
    infer_flags = [
        ("--beam-phrase", int, "NP beam width b_p (default 30)"),
        ("--beam-sentence", int, "sentence beam width b_s (default 20)"),
        ("--threshold", float, "NP score threshold T (default -1.5)"),
        ("--max-np-len", int, "NP length cap (default 7)"),
        ("--max-slots", int, "sentence slot cap (default 20)"),
    ]
    trunc_flags = [
        ("--as-limit", int, "abbreviated-sentence slot cap (default 20)"),
        ("--np-limit", int, "NP word cap (default 7)"),
    ]

    def add_flags(p, flags):
        for name, typ, help_text in flags:
            p.add_argument(name, type=typ, help=help_text)

    p = sub.add_parser("chunk", help="chunk a corpus into AS-NP pairs")
    _add_common(p, "config", "corpus", "output")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("train-phrase", help="stage 1: train the phrase decoder")
    _add_common(p, "config", "corpus", "features", "splits", "checkpoint")
    add_flags(p, train_flags)
    p.set_defaults(func=cmd_train_phrase)

    p = sub.add_parser("refine-corpus", help="refine chunked pairs with a stage-1 checkpoint")
    _add_common(p, "config", "corpus", "features", "splits", "checkpoint", "output")
    add_flags(p, infer_flags + trunc_flags)
    p.set_defaults(func=cmd_refine_corpus)

    p = sub.add_parser("train", help="two-stage pipeline to a final checkpoint")
    _add_common(p, "config", "corpus", "features", "splits", "checkpoint")
    add_flags(p, train_flags + infer_flags + trunc_flags)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate captions from a checkpoint")
    _add_common(p, "config", "features", "splits", "checkpoint", "output")
    add_flags(p, infer_flags)
    p.add_argument("--split", default="test", choices=("train", "val", "test"),
                   help="split to caption when --splits is given (default test)")
    p.add_argument("--threads", type=int, help="worker cap for per-image generation (default 1)")
    p.add_argument("--sweep", type=_float_list, default=None,
                   help="comma-separated thresholds: emit per-T uniqueness rows instead")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score generated captions against references")
    p.add_argument("--generated", required=True, help="captions JSONL from generate")
    p.add_argument("--references", required=True, help="reference corpus.jsonl")
    p.add_argument("--train-captions", help="training corpus.jsonl for novelty stats")
    p.add_argument("--brevity-penalty", action="store_true",
                   help="enable the BLEU brevity penalty (default off)")
    _add_common(p, "output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full gradient")
    p.add_argument("--k", type=int, default=8, help="hidden size (default 8)")
    p.add_argument("--d", type=int, default=6, help="feature size (default 6)")
    p.add_argument("--v", type=int, default=12, help="vocabulary size (default 12)")
    p.add_argument("--seed", type=int, default=2, help="probe seed (default 2)")
    p.add_argument("--epsilon", type=float, default=1e-5, help="step size (default 1e-5)")
    p.add_argument("--lam", type=float, default=1e-2, help="L2 coefficient (default 1e-2)")
    p.add_argument("--tolerance", type=float, default=1e-5,
                   help="max relative error allowed (default 1e-5)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        args._config = read_config(args.config) if getattr(args, "config", None) else {}
        return args.func(args)
    except ValidationFailure as e:
        json.dump({"error": str(e), "kind": "validation"}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except (OSError, CorpusFormatError) as e:
        json.dump({"error": str(e), "kind": "io"}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except ValueError as e:
        json.dump({"error": str(e), "kind": "validation"}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
