"""Backpropagation through the two-level decoder, RMSprop updates, and the
two-stage training pipeline (phrase decoder first, refinement, then the full
model).

The sentence decoder's gradient with respect to each phrase vector z is
injected as the initial hidden-state gradient of that NP's backward pass, so
phrase parameters receive both their own word-prediction gradients and the
sentence-level signal.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import inference
from .corpus import TruncationPolicy, build_vocab, truncate
from .model import (
    EncodedExample,
    LossConfig,
    PhiParams,
    PhraseForward,
    SentenceForward,
    encode_example,
    example_forward,
    phrase_forward,
    sentence_perplexity,
    indication_kappas,
)
from .nncore import LOG2, LstmRunner, make_rng, sigmoid
from .phrasing import RefinementContext, chunk, refine

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    batch_size: int = 300
    epochs: int = 20
    dropout_rate: float = 0.5
    seed: int = 0
    hidden_size: int = 256
    init_scale: float = 0.08
    clip_norm: float = 5.0  # 0 disables clipping
    min_count: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def _prediction_backward(probs, targets, masks, states, w_d, name_w, name_b, grads):
    """Softmax cross-entropy gradients for one decoder's prediction steps.

    Returns (neg_log_total, per-state dh list aligned with `states`).
    """
    dh = [np.zeros_like(states[0].h) for _ in states]
    neg_log = 0.0
    for j, (p, tgt) in enumerate(zip(probs, targets, strict=True)):
        neg_log += -np.log2(max(float(p[tgt]), 1e-300))
        dlogit = p.copy()
        dlogit[tgt] -= 1.0
        dlogit /= LOG2
        h = states[j + 1].h
        hd = h if masks is None else h * masks[j]
        grads[name_w] += np.outer(dlogit, hd)
        grads[name_b] += dlogit
        back = w_d.T @ dlogit
        dh[j + 1] += back if masks is None else back * masks[j]
    return neg_log, dh


def _phrase_backward(params, fwd: PhraseForward, dz, grads):
    """Backward pass of one NP; dz is the upstream gradient on its z vector."""
    neg_log, dh = _prediction_backward(
        fwd.probs, fwd.targets, fwd.drop_masks, fwd.states, params.w_dp, "w_dp", "b_dp", grads
    )
    if dz is not None:
        dh[-1] += dz
    runner = LstmRunner(params.lstm_p)
    lstm_grads, dxs, _, _ = runner.backward(fwd.caches, dh)
    for name, arr in lstm_grads.items():
        grads["lstm_p." + name] += arr
    feat_grad = dxs[0]
    grads["x_sp"] += dxs[1]
    for t, wid in enumerate(fwd.token_ids):
        grads["w_ep"][:, wid] += dxs[2 + t]
    return neg_log, feat_grad


def _indication_backward(fwd: SentenceForward, cfg: LossConfig, params, grads, dh):
    """Margin-loss gradients; accumulates into w_ps and the per-state dh."""
    labels = fwd.ind_labels
    scores = fwd.ind_scores
    kap = indication_kappas(labels, cfg)
    margin = 1.0 - labels * scores
    if cfg.hinge == "sigmoid":
        s = sigmoid(margin)
        dscore = kap * s * (1.0 - s) * (-labels)
        loss = float((kap * s).sum())
    else:
        active = margin > 0
        dscore = np.where(active, -labels * kap, 0.0)
        loss = float((kap * np.maximum(0.0, margin)).sum())
    for j, ds in enumerate(dscore):
        h = fwd.states[j + 1].h
        grads["w_ps"] += ds * h
        dh[j + 1] += ds * params.w_ps
    return loss


def backprop_example(params: PhiParams, ex: EncodedExample, end_id, cfg: LossConfig, *, drop_rate=0.0, rng=None):
    """Gradients of the unnormalized data term of one example.

    Returns (grads, neg_log_total, indication_loss, M).  The caller scales by
    1/Q and adds the L2 gradient.
    """
    phrase_fwds, sent_fwd = example_forward(params, ex, end_id, drop_rate=drop_rate, rng=rng)
    grads = params.zero_grads()

    neg_log, dh = _prediction_backward(
        sent_fwd.probs, sent_fwd.targets, sent_fwd.drop_masks, sent_fwd.states,
        params.w_ds, "w_ds", "b_ds", grads,
    )
    c_pi = _indication_backward(sent_fwd, cfg, params, grads, dh)

    runner = LstmRunner(params.lstm_s)
    lstm_grads, dxs, _, _ = runner.backward(sent_fwd.caches, dh)
    for name, arr in lstm_grads.items():
        grads["lstm_s." + name] += arr
    feat_grad_s = dxs[0]
    grads["x_ss"] += dxs[1]
    dz = [None] * len(ex.nps)
    for t, (kind, value) in enumerate(ex.slots):
        if kind == "w":
            grads["w_es"][:, value] += dxs[2 + t]
        else:
            dz[value] = dxs[2 + t]

    grads["w_is"] += np.outer(feat_grad_s, ex.feature)
    grads["b_is"] += feat_grad_s

    for i, fwd in enumerate(phrase_fwds):
        np_neg_log, feat_grad_p = _phrase_backward(params, fwd, dz[i], grads)
        neg_log += np_neg_log
        grads["w_ip"] += np.outer(feat_grad_p, ex.feature)
        grads["b_ip"] += feat_grad_p

    return grads, neg_log, c_pi, ex.n_terms()


def batch_gradient(params: PhiParams, batch, end_id, cfg: LossConfig, *, drop_rate=0.0, rng=None):
    """Gradient of the full batch objective; returns (grads, cost, m_total)."""
    if not batch:
        raise ValueError("empty batch")
    total = params.zero_grads()
    data = 0.0
    m_total = 0
    for ex in batch:
        grads, neg_log, c_pi, m = backprop_example(
            params, ex, end_id, cfg, drop_rate=drop_rate, rng=rng
        )
        for name in total:
            total[name] += grads[name]
        data += neg_log + c_pi
        m_total += m
    q = len(batch) * m_total
    for name, arr in params.tensors().items():
        total[name] = total[name] / q + 2.0 * cfg.lam * arr
    cost = data / q + cfg.lam * params.sq_norm()
    return total, cost, m_total


@dataclass
class OptState:
    """RMSprop running mean of squared gradients, one buffer per tensor."""

    cache: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: PhiParams):
        return cls({name: np.zeros_like(arr) for name, arr in params.tensors().items()})


def rmsprop_step(params: PhiParams, grads, opt: OptState, cfg: TrainConfig, names=None):
    """In-place RMSprop update; `names` restricts the update to a tensor subset."""
    tensors = params.tensors()
    names = list(tensors) if names is None else names
    for name in names:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient for %s; step aborted" % name)
        c = opt.cache[name]
        c *= cfg.rmsprop_decay
        c += (1.0 - cfg.rmsprop_decay) * g * g
        tensors[name] -= cfg.learning_rate * g / (np.sqrt(c) + cfg.rmsprop_epsilon)


def clip_gradients(grads, max_norm):
    """Scale all gradients down to a global L2 norm cap; returns the raw norm."""
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


PHRASE_TENSORS = (
    "w_ip", "b_ip", "x_sp", "w_ep",
    "lstm_p.w_i", "lstm_p.w_f", "lstm_p.w_o", "lstm_p.w_u",
    "lstm_p.u_i", "lstm_p.u_f", "lstm_p.u_o", "lstm_p.u_u",
    "lstm_p.b_i", "lstm_p.b_f", "lstm_p.b_o", "lstm_p.b_u",
    "w_dp", "b_dp",
)


def _phrase_batch_gradient(params, batch, end_id, cfg: LossConfig, *, drop_rate=0.0, rng=None):
    """Stage-1 objective: word prediction over each image's NPs only."""
    total = params.zero_grads()
    data = 0.0
    m_total = 0
    for ex in batch:
        fwds = [
            phrase_forward(params, ex.feature, ids, end_id, drop_rate=drop_rate, rng=rng)
            for ids in ex.nps
        ]
        grads = params.zero_grads()
        for fwd in fwds:
            neg_log, feat_grad = _phrase_backward(params, fwd, None, grads)
            grads["w_ip"] += np.outer(feat_grad, ex.feature)
            grads["b_ip"] += feat_grad
            data += neg_log
            m_total += len(fwd.targets)
        for name in PHRASE_TENSORS:
            total[name] += grads[name]
    q = len(batch) * max(m_total, 1)
    tensors = params.tensors()
    for name in PHRASE_TENSORS:
        total[name] = total[name] / q + 2.0 * cfg.lam * tensors[name]
    cost = data / q + cfg.lam * sum(float((tensors[n] ** 2).sum()) for n in PHRASE_TENSORS)
    return total, cost, m_total


def _minibatches(items, batch_size, rng):
    order = np.arange(len(items))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [items[int(i)] for i in order[start : start + batch_size]]


def _copy_params(params: PhiParams):
    import copy

    return copy.deepcopy(params)


def corpus_log2ppl(params, examples, end_id):
    """Per-term log2 perplexity over a set of examples (evaluation mode)."""
    total, m_total = 0.0, 0
    for ex in examples:
        phrase_fwds, sent_fwd = example_forward(params, ex, end_id)
        m = ex.n_terms()
        total += m * sentence_perplexity(phrase_fwds, sent_fwd)
        m_total += m
    return total / max(m_total, 1)


def phrase_log2ppl(params, examples, end_id):
    """Per-word log2 perplexity of the phrase decoder alone."""
    total, count = 0.0, 0
    for ex in examples:
        for ids in ex.nps:
            fwd = phrase_forward(params, ex.feature, ids, end_id)
            for p, tgt in zip(fwd.probs, fwd.targets):
                total += -np.log2(max(float(p[tgt]), 1e-300))
                count += 1
    return total / max(count, 1)


def _train_loop(params, examples, val_examples, end_id, cfg: TrainConfig, loss_cfg, rng, grad_fn, names, log_cb=None):
    opt = OptState.for_params(params)
    best = (_copy_params(params), float("inf"))
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        epoch_cost = 0.0
        n_batches = 0
        for batch in _minibatches(examples, cfg.batch_size, rng):
            grads, cost, _ = grad_fn(
                params, batch, end_id, loss_cfg, drop_rate=cfg.dropout_rate, rng=rng
            )
            if not np.isfinite(cost):
                log.error("non-finite cost at epoch %d; aborting with last good params", epoch)
                return best[0] if val_examples else params, history
            clip_gradients(grads, cfg.clip_norm)
            try:
                rmsprop_step(params, grads, opt, cfg, names)
            except ValueError as e:
                log.error("%s; aborting with last good params", e)
                return best[0] if val_examples else params, history
            epoch_cost += cost
            if log_cb:
                log_cb({"epoch": epoch, "batch": n_batches, "cost": cost})
            n_batches += 1
        entry = {
            "epoch": epoch,
            "cost": epoch_cost / max(n_batches, 1),
            "seconds": time.monotonic() - t0,
        }
        if val_examples:
            val = corpus_log2ppl(params, val_examples, end_id)
            entry["val_log2ppl"] = val
            if val < best[1]:
                best = (_copy_params(params), val)
        history.append(entry)
        if log_cb:
            log_cb(entry)
    return (best[0] if val_examples else params), history


def train_stage1(pairs, features, vocab, cfg: TrainConfig, loss_cfg=None, log_cb=None):
    """Train only the phrase decoder on chunked (unrefined) NPs."""
    loss_cfg = loss_cfg or LossConfig()
    rng = make_rng(cfg.seed)
    d = len(next(iter(features.values())))
    params = PhiParams.init(cfg.hidden_size, d, len(vocab), rng, cfg.init_scale)
    examples = [
        encode_example(image_id, pair, vocab, features[image_id])
        for image_id, _, pair in pairs
        if pair.nps
    ]
    params, history = _train_loop(
        params, examples, [], vocab.end, cfg, loss_cfg, rng,
        _phrase_batch_gradient, list(PHRASE_TENSORS), log_cb,
    )
    return params, history


def refine_corpus(params, pairs, features, vocab, infer_cfg, policy: TruncationPolicy):
    """Generate NPs per training image, refine every pair of that image
    against the generated first/last word sets, then truncate.

    Returns (refined pairs, stats) where stats counts refinement-changed and
    truncation-affected pairs.
    """
    contexts = {}
    refined = []
    stats = {"total": len(pairs), "refined": 0, "truncated": 0}
    for image_id, caption, pair in pairs:
        if image_id not in contexts:
            cands = inference.generate_nps(params, features[image_id], vocab, infer_cfg)
            contexts[image_id] = RefinementContext(
                g_s={c.tokens[0] for c in cands}, g_e={c.tokens[-1] for c in cands}
            )
        new_pair = refine(pair, contexts[image_id])
        if new_pair.surface() != pair.surface():
            stats["refined"] += 1
        cut = truncate(new_pair, policy)
        if cut.flatten() != new_pair.flatten():
            stats["truncated"] += 1
        refined.append((image_id, caption, cut))
    return refined, stats


def train_full(pairs, features, vocab, cfg: TrainConfig, loss_cfg=None, init_params=None, val_pairs=None, log_cb=None):
    """Jointly train both decoders; phrase side may warm-start from stage 1."""
    loss_cfg = loss_cfg or LossConfig()
    rng = make_rng(cfg.seed + 1)
    d = len(next(iter(features.values())))
    if init_params is None:
        params = PhiParams.init(cfg.hidden_size, d, len(vocab), rng, cfg.init_scale)
    else:
        params = _copy_params(init_params)
    examples = [
        encode_example(image_id, pair, vocab, features[image_id])
        for image_id, _, pair in pairs
    ]
    val_examples = [
        encode_example(image_id, pair, vocab, features[image_id])
        for image_id, _, pair in (val_pairs or [])
    ]
    return _train_loop(
        params, examples, val_examples, vocab.end, cfg, loss_cfg, rng,
        batch_gradient, None, log_cb,
    )


def split_records(records, splits):
    by_split = {}
    for key in ("train", "val", "test"):
        ids = set(splits[key])
        by_split[key] = [r for r in records if r.image_id in ids]
    return by_split


def two_stage_pipeline(records, features, splits, train_cfg: TrainConfig, loss_cfg, infer_cfg, policy, stage1_cfg=None, log_cb=None):
    """Full training pipeline; reads only train/val split records.

    Returns (params, vocab, refined_pairs, history).
    """
    by_split = split_records(records, splits)
    train_records = by_split["train"]
    if not train_records:
        raise ValueError("no training records selected by the split file")
    vocab = build_vocab((r.tokens for r in train_records), train_cfg.min_count)
    pairs = [(r.image_id, r.caption, chunk(r.tokens, r.triplets)) for r in train_records]
    val_pairs = [
        (r.image_id, r.caption, truncate(chunk(r.tokens, r.triplets), policy))
        for r in by_split["val"]
        if r.image_id in features
    ]
    stage1, hist1 = train_stage1(
        pairs, features, vocab, stage1_cfg or train_cfg, loss_cfg, log_cb
    )
    refined, refine_stats = refine_corpus(stage1, pairs, features, vocab, infer_cfg, policy)
    params, hist2 = train_full(
        refined, features, vocab, train_cfg, loss_cfg, stage1, val_pairs, log_cb
    )
    history = {"stage1": hist1, "full": hist2, "refine": refine_stats}
    return params, vocab, refined, history
