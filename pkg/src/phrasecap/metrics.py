"""Caption evaluation: corpus BLEU (micro-averaged clipped n-gram precision),
ROUGE-L, and uniqueness/novelty/word-content statistics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n=4, use_brevity_penalty=False):
    """Corpus-level BLEU-n.

    candidates: list of token lists; references: list of reference lists (one
    list of token lists per candidate).  Clipped n-gram counts are pooled over
    the corpus before the geometric mean.  The brevity penalty defaults to off.
    """
    if len(candidates) != len(references):
        raise ValueError("need one reference list per candidate")
    if n < 1:
        raise ValueError("n must be >= 1")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
        for order in range(1, n + 1):
            cgrams = _ngrams(cand, order)
            if not cgrams:
                continue
            clip = Counter()
            for r in refs:
                rgrams = _ngrams(r, order)
                for g in cgrams:
                    clip[g] = max(clip[g], rgrams.get(g, 0))
            matched[order - 1] += sum(min(c, clip[g]) for g, c in cgrams.items())
            total[order - 1] += sum(cgrams.values())
    precisions = []
    for m, t in zip(matched, total):
        if t == 0 or m == 0:
            return 0.0
        precisions.append(m / t)
    score = math.exp(sum(math.log(p) for p in precisions) / n)
    if use_brevity_penalty and cand_len < ref_len:
        if cand_len == 0:
            return 0.0
        score *= math.exp(1.0 - ref_len / cand_len)
    return score


def _lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, references):
    """Balanced-F ROUGE-L against the best reference: F = 2PR / (P + R) with
    P and R from the longest common subsequence."""
    best = 0.0
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        if lcs == 0 or not candidate or not ref:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        best = max(best, 2.0 * p * r / (p + r))
    return best


def corpus_rouge_l(candidates, references):
    if len(candidates) != len(references):
        raise ValueError("need one reference list per candidate")
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass
class EvalReport:
    bleu_1: float = 0.0
    bleu_2: float = 0.0
    bleu_3: float = 0.0
    bleu_4: float = 0.0
    rouge_l: float = 0.0
    pct_unique: float = 0.0
    pct_seen_in_training: float = 0.0
    avg_length: float = 0.0
    unique_word_count: int = 0
    within_vocab_word_count: int = 0
    least_seen_words: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def to_table(self):
        rows = [
            ("BLEU-1", "%.4f" % self.bleu_1),
            ("BLEU-2", "%.4f" % self.bleu_2),
            ("BLEU-3", "%.4f" % self.bleu_3),
            ("BLEU-4", "%.4f" % self.bleu_4),
            ("ROUGE-L", "%.4f" % self.rouge_l),
            ("unique captions %", "%.2f" % self.pct_unique),
            ("seen in training %", "%.2f" % self.pct_seen_in_training),
            ("avg caption length", "%.2f" % self.avg_length),
            ("unique words", str(self.unique_word_count)),
            ("within-vocab words", str(self.within_vocab_word_count)),
        ]
        for word, count in self.least_seen_words:
            rows.append(("least seen: " + word, str(count)))
        width = max(len(r[0]) for r in rows)
        return "\n".join("%-*s  %s" % (width, k, v) for k, v in rows)


def caption_stats(generated, training_captions):
    """Uniqueness, novelty, length and word-content statistics.

    generated / training_captions: lists of token lists.  Returns a dict of
    EvalReport field values (metrics left to the caller).
    """
    if not generated:
        raise ValueError("no generated captions")
    strings = [" ".join(t) for t in generated]
    train_set = {" ".join(t) for t in training_captions}
    train_words = {w for t in training_captions for w in t}
    words = {w for t in generated for w in t}
    return {
        "pct_unique": 100.0 * len(set(strings)) / len(strings),
        "pct_seen_in_training": 100.0 * sum(s in train_set for s in strings) / len(strings),
        "avg_length": sum(len(t) for t in generated) / len(generated),
        "unique_word_count": len(words),
        "within_vocab_word_count": len(words & train_words),
    }


def least_seen_words(generated, training_counts, k):
    """The k generated words rarest in training, ascending count then
    lexicographic."""
    words = {w for t in generated for w in t}
    ranked = sorted(words, key=lambda w: (training_counts.get(w, 0), w))
    return [(w, training_counts.get(w, 0)) for w in ranked[:k]]


def evaluate(generated, references, training_captions, k_least=5, use_brevity_penalty=False):
    """Full report: BLEU-1..4, ROUGE-L, and the caption statistics."""
    stats = caption_stats(generated, training_captions)
    counts = Counter(w for t in training_captions for w in t)
    report = EvalReport(
        bleu_1=bleu(generated, references, 1, use_brevity_penalty),
        bleu_2=bleu(generated, references, 2, use_brevity_penalty),
        bleu_3=bleu(generated, references, 3, use_brevity_penalty),
        bleu_4=bleu(generated, references, 4, use_brevity_penalty),
        rouge_l=corpus_rouge_l(generated, references),
        least_seen_words=least_seen_words(generated, counts, k_least),
        **stats,
    )
    return report
