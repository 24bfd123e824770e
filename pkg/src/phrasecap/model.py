"""The two-level caption model: a phrase decoder that also encodes each noun
phrase into a compositional vector, and a sentence decoder that consumes words
and phrase vectors, predicting the next surface word and whether the next
input is a phrase.

Sequence conventions, with L the NP word count and N the slot count:

  phrase decoder inputs   [image embed, start vector, word embeds w_1..w_L]
  phrase predictions      from the L+1 states after the start vector;
                          prediction j targets w_{j+1}, the last targets </s>
  phrase vector z         hidden state after the last word
  sentence inputs         [image embed, start vector, slot inputs 1..N]
                          where a phrase slot's input is its z vector
  sentence predictions    N+1 targets: each slot's surface word (a word slot's
                          token, a phrase slot's last word), then </s>
  indication scores       one per prediction state; the state before slot t
                          scores whether slot t is a phrase (+1) or not (-1),
                          with -1 at the final state before </s>

Costs: per-caption log2 perplexity averaged over all M prediction terms, a
sigmoid-margin phrase-indication loss, and a batch objective
(1/Q) sum_j [M_j * log2ppl_j + indication_j] + lambda * ||theta||^2 with
Q = P * sum_j M_j.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nncore import (
    DEFAULT_DTYPE,
    LstmParams,
    LstmRunner,
    check_finite,
    check_mat,
    check_vec,
    project_softmax,
    sigmoid,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-30


@dataclass
class PhiParams:
    """All trainable tensors of both decoders.

    The phrase and sentence decoders have disjoint parameter sets: image
    embedding (w_i*, b_i*), trainable start vector (x_s*), word embedding
    (w_e*), LSTM gates, output projection (w_d*, b_d*); plus the shared
    phrase-indication vector w_ps read against sentence hidden states.
    """

    w_ip: np.ndarray
    b_ip: np.ndarray
    x_sp: np.ndarray
    w_ep: np.ndarray
    lstm_p: LstmParams
    w_dp: np.ndarray
    b_dp: np.ndarray
    w_is: np.ndarray
    b_is: np.ndarray
    x_ss: np.ndarray
    w_es: np.ndarray
    lstm_s: LstmParams
    w_ds: np.ndarray
    b_ds: np.ndarray
    w_ps: np.ndarray

    def __post_init__(self):
        k = self.x_sp.shape[0]
        d = self.w_ip.shape[1]
        v = self.w_ep.shape[1]
        for side in "ps":
            check_mat(getattr(self, "w_i" + side), k, d, "w_i" + side)
            check_vec(getattr(self, "b_i" + side), k, "b_i" + side)
            check_vec(getattr(self, "x_s" + side), k, "x_s" + side)
            check_mat(getattr(self, "w_e" + side), k, v, "w_e" + side)
            check_mat(getattr(self, "w_d" + side), v, k, "w_d" + side)
            check_vec(getattr(self, "b_d" + side), v, "b_d" + side)
            if getattr(self, "lstm_" + side).k != k:
                raise ValueError("lstm_%s hidden size != %d" % (side, k))
        check_vec(self.w_ps, k, "w_ps")

    @property
    def k(self):
        return self.x_sp.shape[0]

    @property
    def d(self):
        return self.w_ip.shape[1]

    @property
    def v(self):
        return self.w_ep.shape[1]

    def tensors(self):
        """Declared parameter order; checkpoints and the optimizer follow it."""
        out = {}
        for side in "ps":
            out["w_i" + side] = getattr(self, "w_i" + side)
            out["b_i" + side] = getattr(self, "b_i" + side)
            out["x_s" + side] = getattr(self, "x_s" + side)
            out["w_e" + side] = getattr(self, "w_e" + side)
            for name, arr in getattr(self, "lstm_" + side).tensors().items():
                out["lstm_%s.%s" % (side, name)] = arr
            out["w_d" + side] = getattr(self, "w_d" + side)
            out["b_d" + side] = getattr(self, "b_d" + side)
        out["w_ps"] = self.w_ps
        return out

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.tensors().items()}

    def sq_norm(self):
        return float(sum((arr**2).sum() for arr in self.tensors().values()))

    @classmethod
    def zeros(cls, k, d, v, dtype=DEFAULT_DTYPE):
        z = lambda *shape: np.zeros(shape, dtype=dtype)
        return cls(
            z(k, d), z(k), z(k), z(k, v), LstmParams.zeros(k, dtype),
            z(v, k), z(v),
            z(k, d), z(k), z(k), z(k, v), LstmParams.zeros(k, dtype),
            z(v, k), z(v),
            z(k),
        )

    @classmethod
    def init(cls, k, d, v, rng, scale=0.08, dtype=DEFAULT_DTYPE):
        """Uniform(-scale, scale) weights, zero biases."""
        u = lambda *shape: rng.uniform(-scale, scale, size=shape).astype(dtype)
        z = lambda *shape: np.zeros(shape, dtype=dtype)
        return cls(
            u(k, d), z(k), u(k), u(k, v), LstmParams.init(k, rng, scale, dtype),
            u(v, k), z(v),
            u(k, d), z(k), u(k), u(k, v), LstmParams.init(k, rng, scale, dtype),
            u(v, k), z(v),
            u(k),
        )


@dataclass
class LossConfig:
    lam: float = 0.0
    kappa_phrase: float = 1.0
    kappa_word: float = 1.0
    hinge: str = "sigmoid"  # "sigmoid" (as formulated) or "relu" (max(0, .))

    def __post_init__(self):
        if self.lam < 0 or self.kappa_phrase < 0 or self.kappa_word < 0:
            raise ValueError("loss weights must be >= 0")
        if self.hinge not in ("sigmoid", "relu"):
            raise ValueError("hinge must be 'sigmoid' or 'relu'")


@dataclass
class EncodedExample:
    """One caption ready for the decoders: id-encoded slots and NPs."""

    image_id: str
    feature: np.ndarray
    slots: list  # ("w", token_id) | ("p", np_index)
    nps: list  # list of token-id lists, each non-empty

    @property
    def n_slots(self):
        return len(self.slots)

    def n_terms(self):
        """M: sentence prediction terms plus every phrase's prediction terms."""
        return (self.n_slots + 1) + sum(len(ids) + 1 for ids in self.nps)


def encode_example(image_id, pair, vocab, feature) -> EncodedExample:
    slots = []
    for slot in pair.slots:
        if hasattr(slot, "token"):
            slots.append(("w", vocab.encode(slot.token)))
        else:
            slots.append(("p", slot.np_index))
    nps = [[vocab.encode(t) for t in np_.tokens] for np_ in pair.nps]
    return EncodedExample(image_id, np.asarray(feature, dtype=np.float64), slots, nps)


@dataclass
class PhraseForward:
    probs: list  # L+1 distributions
    targets: list  # L word ids followed by the end id
    z: np.ndarray  # hidden state after the last word
    states: list
    caches: list
    drop_masks: list | None
    token_ids: list


@dataclass
class SentenceForward:
    probs: list  # N+1 distributions
    targets: list  # surface ids of slots 1..N followed by the end id
    ind_scores: np.ndarray  # N+1 scores h . w_ps
    ind_labels: np.ndarray  # +1 phrase / -1 word (and -1 before </s>)
    states: list
    caches: list
    drop_masks: list | None
    slots: list
    phrase_steps: list  # slot positions holding phrase vectors


def _drop_masks(count, k, rate, rng):
    if rate <= 0.0:
        return None
    if rng is None:
        raise ValueError("dropout requires an rng")
    keep = 1.0 - rate
    return [(rng.random(k) < keep).astype(np.float64) / keep for _ in range(count)]


def phrase_forward(params: PhiParams, feature, np_ids, end_id, *, drop_rate=0.0, rng=None) -> PhraseForward:
    """Run the phrase decoder over one NP; exposes per-step distributions and
    the compositional vector z (hidden state at the last word, unaffected by
    the end-token prediction)."""
    if len(np_ids) == 0:
        raise ValueError("noun phrase must contain at least one word")
    v = params.v
    for i in np_ids:
        if not 0 <= i < v:
            raise ValueError("token id %r outside vocabulary of size %d" % (i, v))
    feature = check_vec(np.asarray(feature, dtype=np.float64), params.d, "feature")
    check_finite(feature, "feature")
    xs = [params.w_ip @ feature + params.b_ip, params.x_sp]
    xs += [params.w_ep[:, i] for i in np_ids]
    runner = LstmRunner(params.lstm_p)
    states, caches = runner.run(xs)
    masks = _drop_masks(len(np_ids) + 1, params.k, drop_rate, rng)
    probs = []
    for j, state in enumerate(states[1:]):
        h = state.h if masks is None else state.h * masks[j]
        probs.append(project_softmax(h, params.w_dp, params.b_dp))
    targets = list(np_ids) + [end_id]
    return PhraseForward(probs, targets, states[-1].h, states, caches, masks, list(np_ids))


def as_forward(params: PhiParams, feature, slots, phrase_vectors, end_id, np_last_ids=None, *, drop_rate=0.0, rng=None) -> SentenceForward:
    """Run the sentence decoder over id-encoded slots.

    phrase_vectors maps np_index -> z; np_last_ids maps np_index -> last word
    id (needed to build surface targets when slots carry phrase references).
    """
    n_phrase = sum(1 for kind, _ in slots if kind == "p")
    if n_phrase != len(phrase_vectors):
        raise ValueError(
            "%d phrase vectors supplied for %d phrase slots" % (len(phrase_vectors), n_phrase)
        )
    feature = check_vec(np.asarray(feature, dtype=np.float64), params.d, "feature")
    xs = [params.w_is @ feature + params.b_is, params.x_ss]
    phrase_steps = []
    surface = []
    for kind, value in slots:
        if kind == "w":
            xs.append(params.w_es[:, value])
            surface.append(value)
        else:
            xs.append(check_vec(phrase_vectors[value], params.k, "phrase vector"))
            phrase_steps.append(value)
            surface.append(np_last_ids[value] if np_last_ids is not None else None)
    runner = LstmRunner(params.lstm_s)
    states, caches = runner.run(xs)
    n = len(slots)
    masks = _drop_masks(n + 1, params.k, drop_rate, rng)
    probs = []
    for j, state in enumerate(states[1:]):
        h = state.h if masks is None else state.h * masks[j]
        probs.append(project_softmax(h, params.w_ds, params.b_ds))
    targets = surface + [end_id]
    ind_scores = np.array([float(state.h @ params.w_ps) for state in states[1:]])
    ind_labels = np.array(
        [1.0 if j < n and slots[j][0] == "p" else -1.0 for j in range(n + 1)]
    )
    return SentenceForward(
        probs, targets, ind_scores, ind_labels, states, caches, masks, list(slots), phrase_steps
    )


def _neg_log2(prob_vec, target):
    p = float(prob_vec[target])
    if p < PROB_FLOOR:
        log.warning("probability %.3g clamped to floor %.0e", p, PROB_FLOOR)
        p = PROB_FLOOR
    return -np.log2(p)


def sentence_perplexity(phrase_fwds, sentence_fwd, targets=None):
    """log2 perplexity of one caption: total negative log2 probability of all
    sentence and phrase targets, divided by the term count M."""
    if targets is None:
        sent_targets = sentence_fwd.targets
        np_targets = [f.targets for f in phrase_fwds]
    else:
        sent_targets, np_targets = targets
    total = 0.0
    count = 0
    for prob, tgt in zip(sentence_fwd.probs, sent_targets, strict=True):
        total += _neg_log2(prob, tgt)
        count += 1
    for fwd, tgts in zip(phrase_fwds, np_targets, strict=True):
        for prob, tgt in zip(fwd.probs, tgts, strict=True):
            total += _neg_log2(prob, tgt)
            count += 1
    return total / count


def indication_kappas(labels, cfg: LossConfig):
    """Per-step weights: each class's weight normalized by its step count."""
    labels = np.asarray(labels)
    n_pos = int((labels > 0).sum())
    n_neg = int((labels < 0).sum())
    kap = np.empty(labels.shape[0])
    kap[labels > 0] = cfg.kappa_phrase / max(n_pos, 1)
    kap[labels < 0] = cfg.kappa_word / max(n_neg, 1)
    return kap


def phrase_indication_loss(sentence_fwd: SentenceForward, labels=None, cfg: LossConfig = None):
    """Margin loss on the phrase/word indication scores.

    Default form is sigma(1 - y * s) per step, weighted by the class-count
    normalizers; the 'relu' variant uses max(0, 1 - y * s).
    """
    cfg = cfg or LossConfig()
    labels = sentence_fwd.ind_labels if labels is None else np.asarray(labels, dtype=float)
    scores = sentence_fwd.ind_scores
    if labels.shape != scores.shape:
        raise ValueError("labels shape %s != scores shape %s" % (labels.shape, scores.shape))
    kap = indication_kappas(labels, cfg)
    margin = 1.0 - labels * scores
    if cfg.hinge == "sigmoid":
        terms = sigmoid(margin)
    else:
        terms = np.maximum(0.0, margin)
    return float((kap * terms).sum())


def example_forward(params: PhiParams, ex: EncodedExample, end_id, *, drop_rate=0.0, rng=None):
    """Both decoders over one example; returns (phrase_fwds, sentence_fwd)."""
    phrase_fwds = [
        phrase_forward(params, ex.feature, ids, end_id, drop_rate=drop_rate, rng=rng)
        for ids in ex.nps
    ]
    zs = [f.z for f in phrase_fwds]
    last_ids = [ids[-1] for ids in ex.nps]
    sent_fwd = as_forward(
        params, ex.feature, ex.slots, zs, end_id, last_ids, drop_rate=drop_rate, rng=rng
    )
    return phrase_fwds, sent_fwd


def example_cost_terms(params: PhiParams, ex: EncodedExample, end_id, cfg: LossConfig):
    """(M * log2ppl, indication loss, M) for one example, evaluation mode."""
    phrase_fwds, sent_fwd = example_forward(params, ex, end_id)
    m = ex.n_terms()
    log2ppl = sentence_perplexity(phrase_fwds, sent_fwd)
    c_pi = phrase_indication_loss(sent_fwd, cfg=cfg)
    return m * log2ppl, c_pi, m


def total_cost(batch, params: PhiParams, cfg: LossConfig, end_id):
    """Batch objective: (1/Q) sum_j [M_j log2ppl_j + indication_j] plus the L2
    term, with Q = P * sum_j M_j.  Non-negative when lambda = 0."""
    if not batch:
        raise ValueError("empty batch")
    data = 0.0
    m_total = 0
    for ex in batch:
        neg_log, c_pi, m = example_cost_terms(params, ex, end_id, cfg)
        data += neg_log + c_pi
        m_total += m
    q = len(batch) * m_total
    return data / q + cfg.lam * params.sq_norm()
