import json

import numpy as np
import pytest

from phrasecap.corpus import (
    CorpusFormatError,
    TruncationPolicy,
    Vocabulary,
    build_vocab,
    load_checkpoint,
    load_corpus,
    load_features,
    load_pairs,
    load_splits,
    normalize,
    normalize_tokens,
    pair_from_json,
    pair_to_json,
    save_checkpoint,
    save_pairs,
    truncate,
)
from phrasecap.model import PhiParams
from phrasecap.nncore import make_rng
from phrasecap.phrasing import AsNpPair, DependencyTriplet as T, NounPhrase, Phrase, Word


class TestNormalize:
    def test_sentence_with_terminal_period(self):
        assert normalize("A man in a blue shirt standing in a garden.") == [
            "a", "man", "in", "a", "blue", "shirt", "standing", "in", "a", "garden",
        ]

    def test_case_folding(self):
        assert normalize("DOG") == ["dog"]

    def test_hyphenated_words_kept(self):
        assert normalize("a tree-lined street") == ["a", "tree-lined", "street"]

    def test_commas_removed_everywhere(self):
        assert normalize("men, women, and dogs.") == ["men", "women", "and", "dogs"]

    def test_empty_caption_rejected(self):
        with pytest.raises(ValueError):
            normalize(" . ")

    def test_token_list_remap(self):
        tokens = ["Two", "men", ",", "look", "."]
        trips = [T("nummod", 1, 0), T("nsubj", 3, 1)]
        out_tokens, out_trips = normalize_tokens(tokens, trips)
        assert out_tokens == ["two", "men", "look"]
        assert out_trips == [T("nummod", 1, 0), T("nsubj", 2, 1)]

    def test_triplet_on_punctuation_rejected(self):
        with pytest.raises(ValueError):
            normalize_tokens(["a", ",", "b"], [T("punct", 0, 1)])


class TestVocabulary:
    def test_min_count_threshold(self):
        lists = [["dog"]] * 4 + [["cat"]] * 5
        vocab = build_vocab(lists, min_count=5)
        assert "cat" in vocab and "dog" not in vocab
        assert vocab.encode("dog") == vocab.unk

    def test_min_count_one_keeps_everything(self):
        vocab = build_vocab([["a", "b"], ["c"]], min_count=1)
        assert all(w in vocab for w in "abc")

    def test_hand_tally(self):
        captions = [
            ["a", "dog", "runs"],
            ["a", "cat", "sits"],
            ["a", "dog", "sits"],
            ["the", "dog", "runs"],
            ["a", "bird", "flies"],
            ["the", "cat", "runs"],
        ]
        vocab = build_vocab(captions, min_count=2)
        kept = {"a": 4, "dog": 3, "runs": 3, "cat": 2, "sits": 2, "the": 2}
        for w in kept:
            assert w in vocab, w
        for w in ("bird", "flies"):
            assert w not in vocab

    def test_encode_decode_roundtrip(self):
        vocab = build_vocab([["x", "y", "z"]], min_count=1)
        for i in range(len(vocab)):
            assert vocab.encode(vocab.decode(i)) == i
        assert vocab.encode("nope") == vocab.unk

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([], min_count=1)

    def test_reserved_ids_stable(self):
        vocab = build_vocab([["x"]], min_count=1)
        assert (vocab.start_p, vocab.start_s, vocab.end, vocab.unk) == (0, 1, 2, 3)


def _pair(tokens_groups):
    slots, nps, pos = [], [], 0
    for g in tokens_groups:
        if isinstance(g, str):
            slots.append(Word(g))
            pos += 1
        else:
            slots.append(Phrase(len(nps)))
            nps.append(NounPhrase(list(g), (pos, pos + len(g))))
            pos += len(g)
    return AsNpPair(slots, nps)


class TestTruncate:
    def test_np_keeps_last_words(self):
        pair = _pair([["w%d" % i for i in range(9)], "end"])
        cut = truncate(pair, TruncationPolicy(as_limit=20, np_limit=7))
        assert cut.nps[0].tokens == ["w%d" % i for i in range(2, 9)]

    def test_as_keeps_first_slots(self):
        pair = _pair(["a", "b", ["x", "y"], "c", "d"])
        cut = truncate(pair, TruncationPolicy(as_limit=3, np_limit=7))
        assert len(cut.slots) == 3
        assert cut.flatten() == ["a", "b", "x", "y"]

    def test_dropped_phrase_slots_remove_nps(self):
        pair = _pair([["x", "y"], "a", ["p", "q"]])
        cut = truncate(pair, TruncationPolicy(as_limit=2, np_limit=7))
        assert len(cut.nps) == 1
        assert cut.flatten() == ["x", "y", "a"]

    def test_within_limits_unchanged_and_idempotent(self):
        pair = _pair(["a", ["x", "y"], "b"])
        policy = TruncationPolicy(as_limit=3, np_limit=2)
        once = truncate(pair, policy)
        assert once.flatten() == pair.flatten()
        twice = truncate(once, policy)
        assert twice.flatten() == once.flatten()
        assert len(twice.slots) == len(once.slots)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            TruncationPolicy(as_limit=0, np_limit=1)


class TestDatasetFiles:
    def test_corpus_fixture_roundtrip(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rows = [
            {"image_id": "i1", "caption": "A dog runs.",
             "tokens": ["A", "dog", "runs", "."],
             "triplets": [{"rel": "det", "gov": 1, "dep": 0}]},
            {"image_id": "i2", "caption": "The cat sits.",
             "tokens": ["The", "cat", "sits", "."],
             "triplets": [{"rel": "det", "gov": 1, "dep": 0}]},
            {"image_id": "i3", "caption": "Birds fly.",
             "tokens": ["Birds", "fly", "."], "triplets": []},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        records = load_corpus(str(path))
        assert len(records) == 3
        assert records[0].tokens == ["a", "dog", "runs"]
        assert records[0].triplets == [T("det", 1, 0)]

    def test_malformed_json_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"image_id": "a", "caption": "x", "tokens": ["x"], "triplets": []}\n{oops\n')
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(str(path))

    def test_out_of_bounds_triplet_skipped_with_warning(self, tmp_path, caplog):
        path = tmp_path / "c.jsonl"
        rows = [
            {"image_id": "i1", "caption": "A dog.", "tokens": ["A", "dog", "."],
             "triplets": [{"rel": "det", "gov": 1, "dep": 9}]},
            {"image_id": "i2", "caption": "A cat.", "tokens": ["A", "cat", "."],
             "triplets": [{"rel": "det", "gov": 1, "dep": 0}]},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        with caplog.at_level("WARNING"):
            records = load_corpus(str(path))
        assert [r.image_id for r in records] == ["i2"]
        assert any("rejected" in m for m in caplog.messages)

    def test_feature_dimension_mismatch(self, tmp_path):
        path = tmp_path / "f.jsonl"
        path.write_text(
            json.dumps({"image_id": "a", "feat": [1.0, 2.0]}) + "\n"
            + json.dumps({"image_id": "b", "feat": [1.0, 2.0, 3.0]}) + "\n"
        )
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_features(str(path))

    def test_feature_table(self, tmp_path):
        path = tmp_path / "f.jsonl"
        path.write_text(json.dumps({"image_id": "a", "feat": [0.5, -0.5]}) + "\n")
        table = load_features(str(path))
        np.testing.assert_array_equal(table["a"], [0.5, -0.5])

    def test_splits_require_all_keys(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"train": ["a"], "val": []}))
        with pytest.raises(CorpusFormatError):
            load_splits(str(path))

    def test_pairs_roundtrip(self, tmp_path):
        pair = _pair(["a", ["x", "y"], "b"])
        path = tmp_path / "p.jsonl"
        save_pairs(str(path), [("img", "a x y b", pair)])
        [(image_id, caption, loaded)] = load_pairs(str(path))
        assert image_id == "img" and caption == "a x y b"
        assert loaded.flatten() == pair.flatten()
        assert loaded.nps[0].span == (1, 3)

    def test_pair_json_shape(self):
        pair = _pair([["x", "y"], "b"])
        obj = pair_to_json("i", "x y b", pair)
        assert obj["slots"] == [["p", 0], ["w", "b"]]
        assert obj["nps"] == [["x", "y"]]
        _, _, back = pair_from_json(obj)
        assert back.flatten() == ["x", "y", "b"]


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = make_rng(17)
        params = PhiParams.init(6, 4, 9, rng)
        vocab = build_vocab([["a", "b", "c", "d", "e"]], min_count=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, vocab, str(path))
        loaded, vocab2 = load_checkpoint(str(path))
        for name, arr in params.tensors().items():
            assert np.array_equal(arr, loaded.tensors()[name]), name
        assert vocab2.id_to_token == vocab.id_to_token

    def test_version_mismatch(self, tmp_path):
        rng = make_rng(17)
        params = PhiParams.init(3, 2, 6, rng)
        vocab = build_vocab([["a", "b"]], min_count=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, vocab, str(path))
        raw = path.read_bytes()
        header, rest = raw.split(b"\n", 1)
        obj = json.loads(header)
        obj["format_version"] = 99
        path.write_bytes(json.dumps(obj).encode() + b"\n" + rest)
        with pytest.raises(CorpusFormatError, match="version"):
            load_checkpoint(str(path))

    def test_truncated_file(self, tmp_path):
        rng = make_rng(17)
        params = PhiParams.init(3, 2, 6, rng)
        vocab = build_vocab([["a", "b"]], min_count=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, vocab, str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CorpusFormatError, match="truncated"):
            load_checkpoint(str(path))
