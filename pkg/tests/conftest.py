import dataclasses
import pathlib

import pytest

from phrasecap.corpus import (
    TruncationPolicy,
    load_corpus,
    load_features,
    load_splits,
)
from phrasecap.inference import InferenceConfig
from phrasecap.model import LossConfig, encode_example
from phrasecap.phrasing import chunk
from phrasecap.training import (
    TrainConfig,
    build_vocab,
    refine_corpus,
    split_records,
    train_full,
    train_stage1,
)

DATA_DIR = pathlib.Path(__file__).parent / "data" / "toy"

TOY_TRAIN = TrainConfig(
    learning_rate=0.003,
    batch_size=10,
    epochs=500,
    dropout_rate=0.0,
    seed=42,
    hidden_size=32,
    clip_norm=5.0,
    min_count=1,
)
TOY_STAGE1 = dataclasses.replace(TOY_TRAIN, epochs=400)
TOY_INFER = InferenceConfig(
    beam_phrase=10, beam_sentence=5, threshold=-1.5, max_np_len=7, max_slots=12
)
TOY_POLICY = TruncationPolicy(as_limit=12, np_limit=7)


@pytest.fixture(scope="session")
def toy_paths():
    return {
        "corpus": str(DATA_DIR / "corpus.jsonl"),
        "features": str(DATA_DIR / "features.jsonl"),
        "splits": str(DATA_DIR / "splits.json"),
    }


@pytest.fixture(scope="session")
def toy_data(toy_paths):
    records = load_corpus(toy_paths["corpus"])
    features = load_features(toy_paths["features"])
    splits = load_splits(toy_paths["splits"])
    return records, features, splits


@pytest.fixture(scope="session")
def overfit_run(toy_data):
    """One two-stage training run on the toy corpus, shared by tests that
    inspect the trained model.  Elapsed seconds are recorded for the runtime
    budget check."""
    import time

    records, features, splits = toy_data
    by = split_records(records, splits)
    vocab = build_vocab((r.tokens for r in by["train"]), TOY_TRAIN.min_count)
    pairs = [(r.image_id, r.caption, chunk(r.tokens, r.triplets)) for r in by["train"]]
    t0 = time.monotonic()
    stage1, hist1 = train_stage1(pairs, features, vocab, TOY_STAGE1, LossConfig())
    refined, refine_stats = refine_corpus(
        stage1, pairs, features, vocab, TOY_INFER, TOY_POLICY
    )
    params, hist2 = train_full(refined, features, vocab, TOY_TRAIN, LossConfig(), stage1)
    elapsed = time.monotonic() - t0
    examples = [encode_example(i, p, vocab, features[i]) for i, _, p in refined]
    return {
        "records": records,
        "features": features,
        "splits": splits,
        "vocab": vocab,
        "pairs": pairs,
        "stage1": stage1,
        "refined": refined,
        "refine_stats": refine_stats,
        "params": params,
        "examples": examples,
        "history": {"stage1": hist1, "full": hist2},
        "elapsed": elapsed,
    }
