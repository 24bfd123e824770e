"""Dense numeric core: activations, LSTM cell, and finite-difference checking.

Everything here is plain numpy in double precision by default.  Shapes are
validated eagerly so a mismatch fails at construction time instead of
broadcasting silently.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

DEFAULT_DTYPE = np.float64

LOG2 = float(np.log(2.0))


def make_rng(seed):
    """Deterministic generator; the same seed reproduces every draw bit-exactly."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def check_vec(a, n, name="vector"):
    a = np.asarray(a)
    if a.shape != (n,):
        raise ValueError("%s: expected shape (%d,), got %s" % (name, n, a.shape))
    return a


def check_mat(a, rows, cols, name="matrix"):
    a = np.asarray(a)
    if a.shape != (rows, cols):
        raise ValueError(
            "%s: expected shape (%d, %d), got %s" % (name, rows, cols, a.shape)
        )
    return a


def check_finite(a, name="array"):
    if not np.all(np.isfinite(a)):
        raise ValueError("%s contains non-finite entries" % name)
    return a


def sigmoid(x):
    """Logistic function, numerically stable on both tails."""
    x = np.asarray(x, dtype=DEFAULT_DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits):
    """Softmax with max-subtraction; the shift leaves the result unchanged."""
    logits = np.asarray(logits, dtype=DEFAULT_DTYPE)
    check_finite(logits, "logits")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def project_softmax(h, w_d, b_d):
    """softmax(w_d @ h + b_d): distribution over the output vocabulary."""
    h = np.asarray(h)
    w_d = np.asarray(w_d)
    if w_d.ndim != 2 or w_d.shape[1] != h.shape[0]:
        raise ValueError(
            "projection: w_d %s incompatible with h %s" % (w_d.shape, h.shape)
        )
    b_d = check_vec(b_d, w_d.shape[0], "projection bias")
    return softmax(w_d @ h + b_d)


@dataclass
class LstmParams:
    """Gate weights of one LSTM cell.

    Input weights w_*, recurrent weights u_* (all k x k) and biases b_* (k,)
    for the input/forget/output gates and the candidate update u.
    """

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_u: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_u: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_u: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.b_i).shape[0]
        for f in fields(self):
            a = np.asarray(getattr(self, f.name))
            if f.name.startswith("b_"):
                check_vec(a, k, "LstmParams.%s" % f.name)
            else:
                check_mat(a, k, k, "LstmParams.%s" % f.name)
            setattr(self, f.name, a)

    @property
    def k(self):
        return self.b_i.shape[0]

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros(cls, k, dtype=DEFAULT_DTYPE):
        m = lambda: np.zeros((k, k), dtype=dtype)
        v = lambda: np.zeros(k, dtype=dtype)
        return cls(m(), m(), m(), m(), m(), m(), m(), m(), v(), v(), v(), v())

    @classmethod
    def init(cls, k, rng, scale=0.08, dtype=DEFAULT_DTYPE):
        """Uniform(-scale, scale) weights, zero biases."""
        m = lambda: rng.uniform(-scale, scale, size=(k, k)).astype(dtype)
        v = lambda: np.zeros(k, dtype=dtype)
        return cls(m(), m(), m(), m(), m(), m(), m(), m(), v(), v(), v(), v())


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, k, dtype=DEFAULT_DTYPE):
        return cls(np.zeros(k, dtype=dtype), np.zeros(k, dtype=dtype))


@dataclass
class LstmStepCache:
    """Forward activations needed by the backward pass of one step."""

    x: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    u: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


class LstmRunner:
    """Stacked-gate view of LstmParams for fast sequential stepping.

    The four gate blocks are concatenated into single (4k, k) matrices so a
    step costs two matrix-vector products.  Gate row order: i, f, o, u.
    """

    def __init__(self, params: LstmParams):
        self.params = params
        self.k = params.k
        self.w = np.concatenate([params.w_i, params.w_f, params.w_o, params.w_u])
        self.u = np.concatenate([params.u_i, params.u_f, params.u_o, params.u_u])
        self.b = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_u])

    def step(self, x, prev: LstmState):
        k = self.k
        x = check_vec(x, k, "lstm input")
        a = self.w @ x + self.u @ prev.h + self.b
        i = sigmoid(a[:k])
        f = sigmoid(a[k : 2 * k])
        o = sigmoid(a[2 * k : 3 * k])
        u = np.tanh(a[3 * k :])
        c = i * u + f * prev.c
        tc = np.tanh(c)
        h = o * tc
        cache = LstmStepCache(x, prev.c, prev.h, i, f, o, u, c, tc)
        return LstmState(c, h), cache

    def run(self, xs, init=None):
        """Run over a list of input vectors; returns (states, caches)."""
        state = init if init is not None else LstmState.zeros(self.k, self.w.dtype)
        states, caches = [], []
        for x in xs:
            state, cache = self.step(x, state)
            states.append(state)
            caches.append(cache)
        return states, caches

    def step_backward(self, cache: LstmStepCache, dh, dc, grads):
        """Reverse one step; accumulates param grads into `grads` (stacked keys
        'w', 'u', 'b') and returns (dx, dh_prev, dc_prev)."""
        if cache is None:
            raise ValueError("lstm backward requires the forward step cache")
        dh = np.asarray(dh)
        dc = np.asarray(dc)
        do = dh * cache.tanh_c
        dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
        di = dc_total * cache.u
        du = dc_total * cache.i
        df = dc_total * cache.c_prev
        dc_prev = dc_total * cache.f
        da = np.concatenate(
            [
                di * cache.i * (1.0 - cache.i),
                df * cache.f * (1.0 - cache.f),
                do * cache.o * (1.0 - cache.o),
                du * (1.0 - cache.u**2),
            ]
        )
        grads["w"] += np.outer(da, cache.x)
        grads["u"] += np.outer(da, cache.h_prev)
        grads["b"] += da
        dx = self.w.T @ da
        dh_prev = self.u.T @ da
        return dx, dh_prev, dc_prev

    def backward(self, caches, dh_steps, dc_last=None):
        """Backpropagate through a whole run.

        dh_steps holds the upstream hidden-state gradient injected at each
        step (same length as caches).  Returns (param grads keyed like
        LstmParams.tensors(), dx per step, dh into the initial state,
        dc into the initial state).
        """
        if len(caches) != len(dh_steps):
            raise ValueError("dh_steps length must match number of cached steps")
        k = self.k
        stacked = {
            "w": np.zeros_like(self.w),
            "u": np.zeros_like(self.u),
            "b": np.zeros_like(self.b),
        }
        dxs = [None] * len(caches)
        dh_next = np.zeros(k, dtype=self.w.dtype)
        dc_next = (
            np.zeros(k, dtype=self.w.dtype) if dc_last is None else np.asarray(dc_last)
        )
        for t in range(len(caches) - 1, -1, -1):
            dh = dh_next + np.asarray(dh_steps[t])
            dxs[t], dh_next, dc_next = self.step_backward(
                caches[t], dh, dc_next, stacked
            )
        return self._unstack(stacked), dxs, dh_next, dc_next

    def _unstack(self, stacked):
        k = self.k
        out = {}
        for block, name in enumerate(("i", "f", "o", "u")):
            sl = slice(block * k, (block + 1) * k)
            out["w_" + name] = stacked["w"][sl]
            out["u_" + name] = stacked["u"][sl]
            out["b_" + name] = stacked["b"][sl]
        return out


def lstm_step(params: LstmParams, x, prev: LstmState) -> LstmState:
    """One LSTM transition: gates from (x, prev.h), new cell and hidden state."""
    state, _ = LstmRunner(params).step(x, prev)
    return state


def lstm_backward(params: LstmParams, cache: LstmStepCache, grad_h, grad_c):
    """Exact reverse-mode derivatives of one cached step.

    Returns (param grads keyed like LstmParams.tensors(), grad wrt x,
    (grad wrt prev h, grad wrt prev c)).
    """
    runner = LstmRunner(params)
    stacked = {
        "w": np.zeros_like(runner.w),
        "u": np.zeros_like(runner.u),
        "b": np.zeros_like(runner.b),
    }
    dx, dh_prev, dc_prev = runner.step_backward(cache, grad_h, grad_c, stacked)
    return runner._unstack(stacked), dx, (dh_prev, dc_prev)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float


def gradient_check(loss_fn, params, grads, epsilon=1e-5):
    """Central-difference check of analytic gradients.

    loss_fn is zero-argument and must be a pure, deterministic function of the
    arrays in `params`; entries are perturbed in place by +/- epsilon and
    restored.  Relative error per coordinate is |a - n| / (|a| + |n|), with
    0/0 defined as 0.  Returns the worst coordinate found.
    """
    worst = GradCheckResult(0.0, "", (), 0.0, 0.0)
    for name, arr in params.items():
        g = np.asarray(grads[name])
        if g.shape != arr.shape:
            raise ValueError("gradient shape mismatch for %s" % name)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            lp = loss_fn()
            arr[idx] = orig - epsilon
            lm = loss_fn()
            arr[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError("non-finite loss while perturbing %s%s" % (name, idx))
            numeric = (lp - lm) / (2.0 * epsilon)
            analytic = float(g[idx])
            denom = abs(analytic) + abs(numeric)
            rel = 0.0 if denom == 0.0 else abs(analytic - numeric) / denom
            if rel > worst.max_rel_error:
                worst = GradCheckResult(rel, name, idx, analytic, numeric)
    return worst
