"""Two-step caption generation: beam search over the phrase decoder for NP
candidates, threshold filtering grouped by last word, then a sentence beam
search that substitutes NP candidates wherever the indication score signals a
phrase input.

Scores are mean log2 probability per prediction term: an NP's score averages
its word and end-token terms; a caption's score averages the sentence terms
and every substituted NP's terms (the negative of its log2 perplexity).
Beam pruning ties break on the lexicographically smallest flattened token-id
sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PhiParams
from .nncore import LstmRunner, LstmState, project_softmax


@dataclass
class InferenceConfig:
    beam_phrase: int = 30
    beam_sentence: int = 20
    threshold: float = -1.5
    max_np_len: int = 7
    max_slots: int = 20
    normalized_np_score: bool = True

    def __post_init__(self):
        if self.beam_phrase < 1 or self.beam_sentence < 1:
            raise ValueError("beam widths must be >= 1")


@dataclass
class NpCandidate:
    tokens: list
    token_ids: list
    sum_log2: float  # includes the end-token term
    score: float  # sum_log2 / (L + 1), or sum_log2 when unnormalized
    last_word: str
    z: np.ndarray

    @property
    def n_terms(self):
        return len(self.token_ids) + 1


@dataclass
class _NpBeam:
    token_ids: list
    state: LstmState
    sum_log2: float
    finished: bool = False
    z: np.ndarray = None


def _allowed_mask(vocab, v):
    mask = np.ones(v, dtype=bool)
    mask[vocab.start_p] = False
    mask[vocab.start_s] = False
    return mask


def generate_nps(params: PhiParams, feature, vocab, cfg: InferenceConfig):
    """Beam search on the phrase decoder; returns scored candidates sorted by
    descending score.  The end token never extends an empty sequence, and a
    sequence at the length cap is closed with its end-token term."""
    runner = LstmRunner(params.lstm_p)
    feature = np.asarray(feature, dtype=np.float64)
    state = LstmState.zeros(params.k)
    for x in (params.w_ip @ feature + params.b_ip, params.x_sp):
        state, _ = runner.step(x, state)
    allowed = _allowed_mask(vocab, params.v)

    beams = [_NpBeam([], state, 0.0)]
    while any(not b.finished for b in beams):
        pool = [b for b in beams if b.finished]
        for beam in beams:
            if beam.finished:
                continue
            probs = project_softmax(beam.state.h, params.w_dp, params.b_dp)
            logp = np.log2(np.maximum(probs, 1e-300))
            if len(beam.token_ids) >= cfg.max_np_len:
                pool.append(
                    _NpBeam(beam.token_ids, beam.state,
                            beam.sum_log2 + float(logp[vocab.end]), True, beam.state.h)
                )
                continue
            for wid in np.nonzero(allowed)[0]:
                wid = int(wid)
                if wid == vocab.end:
                    if beam.token_ids:
                        pool.append(
                            _NpBeam(beam.token_ids, beam.state,
                                    beam.sum_log2 + float(logp[wid]), True, beam.state.h)
                        )
                    continue
                nstate, _ = runner.step(params.w_ep[:, wid], beam.state)
                pool.append(
                    _NpBeam(beam.token_ids + [wid], nstate, beam.sum_log2 + float(logp[wid]))
                )
        pool.sort(key=lambda b: (-b.sum_log2, tuple(b.token_ids)))
        beams = pool[: cfg.beam_phrase]

    cands = []
    for b in beams:
        denom = len(b.token_ids) + 1 if cfg.normalized_np_score else 1
        tokens = [vocab.decode(i) for i in b.token_ids]
        cands.append(
            NpCandidate(tokens, b.token_ids, b.sum_log2, b.sum_log2 / denom, tokens[-1], b.z)
        )
    cands.sort(key=lambda c: (-c.score, tuple(c.token_ids)))
    return cands


def filter_nps(candidates, threshold):
    """Group by last word; the best-scoring candidate of each group survives
    unconditionally, the rest only when at or above the threshold."""
    groups = {}
    for c in candidates:
        groups.setdefault(c.last_word, []).append(c)
    kept = []
    for group in groups.values():
        group.sort(key=lambda c: (-c.score, tuple(c.token_ids)))
        kept.append(group[0])
        kept.extend(c for c in group[1:] if c.score >= threshold)
    kept.sort(key=lambda c: (-c.score, tuple(c.token_ids)))
    return kept


@dataclass
class CaptionHypothesis:
    slots: list  # ("w", token_id) | ("p", NpCandidate)
    state: LstmState
    sum_log2: float
    n_terms: int
    finished: bool = False

    @property
    def score(self):
        return self.sum_log2 / max(self.n_terms, 1)

    def flat_ids(self):
        out = []
        for kind, value in self.slots:
            if kind == "w":
                out.append(value)
            else:
                out.extend(value.token_ids)
        return tuple(out)


@dataclass
class GeneratedCaption:
    tokens: list
    score: float
    nps_used: list
    slots: list


def generate_caption(params: PhiParams, feature, np_candidates, vocab, cfg: InferenceConfig):
    """Sentence beam search with phrase substitution.

    Each live beam proposes its top beam_sentence next words.  When the
    indication score of the current state is non-negative the next input is
    treated as a phrase: proposed words are matched against candidate last
    words and every match substitutes that NP (adding its phrase terms and
    feeding its z vector); if nothing matches, the step falls back to plain
    word extension.  Beams at the slot cap are closed with the end token.
    """
    runner = LstmRunner(params.lstm_s)
    feature = np.asarray(feature, dtype=np.float64)
    state = LstmState.zeros(params.k)
    for x in (params.w_is @ feature + params.b_is, params.x_ss):
        state, _ = runner.step(x, state)
    allowed = _allowed_mask(vocab, params.v)
    by_last = {}
    for c in np_candidates:
        by_last.setdefault(vocab.encode(c.last_word), []).append(c)

    beams = [CaptionHypothesis([], state, 0.0, 0)]
    while any(not b.finished for b in beams):
        pool = [b for b in beams if b.finished]
        for beam in beams:
            if beam.finished:
                continue
            probs = project_softmax(beam.state.h, params.w_ds, params.b_ds)
            logp = np.log2(np.maximum(probs, 1e-300))
            if len(beam.slots) >= cfg.max_slots:
                pool.append(
                    CaptionHypothesis(beam.slots, beam.state,
                                      beam.sum_log2 + float(logp[vocab.end]),
                                      beam.n_terms + 1, True)
                )
                continue
            order = [
                int(w) for w in np.argsort(-probs, kind="stable") if allowed[w]
            ][: cfg.beam_sentence]
            phrase_next = float(beam.state.h @ params.w_ps) >= 0.0
            extended = False
            if phrase_next:
                for wid in order:
                    for cand in by_last.get(wid, ()):
                        nstate, _ = runner.step(cand.z, beam.state)
                        pool.append(
                            CaptionHypothesis(
                                beam.slots + [("p", cand)], nstate,
                                beam.sum_log2 + float(logp[wid]) + cand.sum_log2,
                                beam.n_terms + 1 + cand.n_terms,
                            )
                        )
                        extended = True
            if not phrase_next or not extended:
                for wid in order:
                    if wid == vocab.end:
                        if beam.slots:
                            pool.append(
                                CaptionHypothesis(beam.slots, beam.state,
                                                  beam.sum_log2 + float(logp[wid]),
                                                  beam.n_terms + 1, True)
                            )
                        continue
                    nstate, _ = runner.step(params.w_es[:, wid], beam.state)
                    pool.append(
                        CaptionHypothesis(beam.slots + [("w", wid)], nstate,
                                          beam.sum_log2 + float(logp[wid]),
                                          beam.n_terms + 1)
                    )
        pool.sort(key=lambda b: (-b.score, b.flat_ids()))
        beams = pool[: cfg.beam_sentence]

    best = beams[0]
    tokens = []
    nps_used = []
    for kind, value in best.slots:
        if kind == "w":
            tokens.append(vocab.decode(value))
        else:
            tokens.extend(value.tokens)
            nps_used.append(list(value.tokens))
    return GeneratedCaption(tokens, best.score, nps_used, best.slots)


def generate_for_image(params: PhiParams, feature, vocab, cfg: InferenceConfig):
    """Two-step generation: NP candidates, threshold filter, then the caption."""
    cands = generate_nps(params, feature, vocab, cfg)
    kept = filter_nps(cands, cfg.threshold)
    return generate_caption(params, feature, kept, vocab, cfg)
