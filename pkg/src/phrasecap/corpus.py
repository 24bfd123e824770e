"""Corpus handling: token normalization, vocabulary, truncation, and the
line-delimited JSON dataset formats plus binary checkpoints.

File formats (all JSON lines unless noted):
  corpus.jsonl    {"image_id", "caption", "tokens", "triplets": [{"rel","gov","dep"}]}
  features.jsonl  {"image_id", "feat": [D floats]}
  pairs.jsonl     {"image_id", "caption", "slots": [["w", token] | ["p", idx]], "nps": [[tokens], ...]}
  splits.json     {"train": [ids], "val": [ids], "test": [ids]}  (single document)
  checkpoint      one JSON header line + raw little-endian tensors in declared order

Triplet token indices are 0-based.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .phrasing import AsNpPair, DependencyTriplet, NounPhrase, Phrase, Word

log = logging.getLogger(__name__)

START_P, START_S, END, UNK = "<s_np>", "<s_as>", "</s>", "<unk>"
RESERVED = (START_P, START_S, END, UNK)


class CorpusFormatError(ValueError):
    """Raised for malformed dataset files; message carries the line number."""


def normalize(caption: str):
    """Raw caption string to normalized tokens.

    Lowercases, removes commas, strips the terminal period, keeps intra-word
    punctuation such as hyphens and apostrophes.
    """
    tokens = caption.lower().replace(",", " ").split()
    if tokens and tokens[-1] == ".":
        tokens.pop()
    elif tokens and tokens[-1].endswith("."):
        tokens[-1] = tokens[-1][:-1]
    tokens = [t for t in tokens if t]
    if not tokens:
        raise ValueError("caption normalized to nothing: %r" % caption)
    return tokens


def normalize_tokens(tokens, triplets):
    """Normalize a pre-tokenized caption, remapping triplet indices.

    Pure "," / "." tokens are dropped; a trailing period attached to the last
    token is stripped.  Returns (tokens, triplets); raises ValueError when a
    triplet references a dropped token.
    """
    kept, remap = [], {}
    last_word = max(
        (i for i, t in enumerate(tokens) if t.lower() not in {",", "."}), default=-1
    )
    for i, tok in enumerate(tokens):
        t = tok.lower().replace(",", "")
        if i == last_word and t.endswith("."):
            t = t[:-1]
        if t in {"", ",", "."}:
            continue
        remap[i] = len(kept)
        kept.append(t)
    if not kept:
        raise ValueError("caption normalized to nothing")
    out = []
    for t in triplets:
        if t.gov not in remap or t.dep not in remap:
            raise ValueError("triplet %s references a dropped punctuation token" % (t,))
        out.append(DependencyTriplet(t.rel, remap[t.gov], remap[t.dep]))
    return kept, out


class Vocabulary:
    """Token <-> id mapping with reserved entries and min-count retention."""

    def __init__(self, tokens, min_count=1):
        self.min_count = min_count
        self.id_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def start_p(self):
        return self.token_to_id[START_P]

    @property
    def start_s(self):
        return self.token_to_id[START_S]

    @property
    def end(self):
        return self.token_to_id[END]

    @property
    def unk(self):
        return self.token_to_id[UNK]

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, token):
        return self.token_to_id.get(token, self.unk)

    def decode(self, idx):
        return self.id_to_token[idx]


def build_vocab(token_lists, min_count=5) -> Vocabulary:
    """Count tokens across the training captions and keep those meeting the
    minimum count; everything else encodes to the unknown token."""
    counts = {}
    total = 0
    for tokens in token_lists:
        total += 1
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    if total == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    return Vocabulary(kept, min_count=min_count)


@dataclass
class CorpusRecord:
    image_id: str
    caption: str
    tokens: list
    triplets: list


@dataclass
class TruncationPolicy:
    """Length caps applied after refinement: abbreviated-sentence slot count
    and per-NP word count."""

    as_limit: int = 20
    np_limit: int = 7

    def __post_init__(self):
        if self.as_limit < 1 or self.np_limit < 1:
            raise ValueError("truncation limits must be >= 1")


def truncate(pair: AsNpPair, policy: TruncationPolicy) -> AsNpPair:
    """Cap lengths: long NPs keep their last np_limit words (the tail carries
    the head noun); long slot sequences keep their first as_limit slots."""
    slots = pair.slots[: policy.as_limit]
    kept_nps, remap = [], {}
    out_slots = []
    for slot in slots:
        if isinstance(slot, Word):
            out_slots.append(slot)
            continue
        np_ = pair.nps[slot.np_index]
        tokens = np_.tokens[-policy.np_limit :]
        start, stop = np_.span
        remap[slot.np_index] = len(kept_nps)
        kept_nps.append(NounPhrase(list(tokens), (stop - len(tokens), stop)))
        out_slots.append(Phrase(remap[slot.np_index]))
    return AsNpPair(out_slots, kept_nps)


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError("%s line %d: %s" % (path, lineno, e)) from e


def load_corpus(path):
    """Read corpus.jsonl into CorpusRecords, normalizing tokens and triplets.

    Structurally invalid lines raise; records whose triplets are out of
    bounds are skipped with a logged diagnostic.
    """
    records = []
    for lineno, obj in _iter_jsonl(path):
        try:
            triplets = [
                DependencyTriplet(t["rel"], int(t["gov"]), int(t["dep"]))
                for t in obj["triplets"]
            ]
            tokens = [str(t) for t in obj["tokens"]]
        except (KeyError, TypeError) as e:
            raise CorpusFormatError("%s line %d: bad record: %s" % (path, lineno, e))
        try:
            for t in triplets:
                t.validate(len(tokens))
            tokens, triplets = normalize_tokens(tokens, triplets)
        except ValueError as e:
            log.warning("%s line %d: record rejected: %s", path, lineno, e)
            continue
        records.append(
            CorpusRecord(str(obj["image_id"]), str(obj["caption"]), tokens, triplets)
        )
    return records


def load_features(path):
    """Read features.jsonl into {image_id: float64 vector}; all vectors must
    share one dimension and be finite."""
    table, dim = {}, None
    for lineno, obj in _iter_jsonl(path):
        try:
            vec = np.asarray(obj["feat"], dtype=np.float64)
            image_id = str(obj["image_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise CorpusFormatError("%s line %d: bad feature record: %s" % (path, lineno, e))
        if vec.ndim != 1:
            raise CorpusFormatError("%s line %d: feature is not a flat vector" % (path, lineno))
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise CorpusFormatError(
                "%s line %d: feature dimension %d != %d" % (path, lineno, vec.shape[0], dim)
            )
        if not np.all(np.isfinite(vec)):
            raise CorpusFormatError("%s line %d: non-finite feature entries" % (path, lineno))
        table[image_id] = vec
    return table


def load_splits(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    for key in ("train", "val", "test"):
        if key not in obj:
            raise CorpusFormatError("%s: missing split %r" % (path, key))
    return {k: [str(i) for i in obj[k]] for k in ("train", "val", "test")}


def pair_to_json(image_id, caption, pair: AsNpPair):
    slots = [
        ["w", s.token] if isinstance(s, Word) else ["p", s.np_index] for s in pair.slots
    ]
    return {
        "image_id": image_id,
        "caption": caption,
        "slots": slots,
        "nps": [np_.tokens for np_ in pair.nps],
    }


def pair_from_json(obj):
    nps = [NounPhrase(list(tokens), (0, 0)) for tokens in obj["nps"]]
    slots = []
    for kind, value in obj["slots"]:
        slots.append(Word(value) if kind == "w" else Phrase(int(value)))
    # Recover source spans from slot order so later truncation stays coherent.
    pos = 0
    for slot in slots:
        if isinstance(slot, Word):
            pos += 1
        else:
            np_ = nps[slot.np_index]
            np_.span = (pos, pos + len(np_.tokens))
            pos += len(np_.tokens)
    return str(obj["image_id"]), str(obj["caption"]), AsNpPair(slots, nps)


def save_pairs(path, entries):
    """entries: iterable of (image_id, caption, AsNpPair)."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, caption, pair in entries:
            fh.write(json.dumps(pair_to_json(image_id, caption, pair)) + "\n")


def load_pairs(path):
    out = []
    for lineno, obj in _iter_jsonl(path):
        try:
            out.append(pair_from_json(obj))
        except (KeyError, TypeError, ValueError) as e:
            raise CorpusFormatError("%s line %d: bad pair record: %s" % (path, lineno, e))
    return out


CHECKPOINT_VERSION = 1


def save_checkpoint(params, vocab: Vocabulary, path):
    """Write a model checkpoint: JSON header line, then each parameter tensor
    as raw little-endian bytes in declared order."""
    tensors = params.tensors()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "K": params.k,
        "D": params.d,
        "V": params.v,
        "dtype": str(next(iter(tensors.values())).dtype),
        "tokens": vocab.id_to_token,
        "min_count": vocab.min_count,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for arr in tensors.values():
            le = arr.dtype.newbyteorder("<")
            fh.write(np.ascontiguousarray(arr, dtype=le).tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, vocab)."""
    from .model import PhiParams

    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorpusFormatError("%s: bad checkpoint header: %s" % (path, e))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CorpusFormatError(
                "%s: checkpoint version %r unsupported (want %d)"
                % (path, header.get("format_version"), CHECKPOINT_VERSION)
            )
        k, d, v = header["K"], header["D"], header["V"]
        dtype = np.dtype(header["dtype"])
        vocab = Vocabulary.__new__(Vocabulary)
        vocab.min_count = header.get("min_count", 1)
        vocab.id_to_token = [str(t) for t in header["tokens"]]
        vocab.token_to_id = {t: i for i, t in enumerate(vocab.id_to_token)}
        if len(vocab) != v:
            raise CorpusFormatError(
                "%s: token list length %d != V=%d" % (path, len(vocab), v)
            )
        params = PhiParams.zeros(k, d, v, dtype=dtype)
        le = dtype.newbyteorder("<")
        for name, arr in params.tensors().items():
            raw = fh.read(arr.size * dtype.itemsize)
            if len(raw) != arr.size * dtype.itemsize:
                raise CorpusFormatError("%s: truncated tensor %s" % (path, name))
            arr[...] = np.frombuffer(raw, dtype=le).reshape(arr.shape)
        trailing = fh.read(1)
        if trailing:
            raise CorpusFormatError("%s: trailing bytes after tensors" % path)
    return params, vocab
