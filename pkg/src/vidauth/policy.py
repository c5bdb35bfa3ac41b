"""Linear-softmax toy policy over temporal video features.

A response is an (answer, length bucket) pair drawn from two independent
softmax heads. The response space is small enough to enumerate, which gives
exact normalization, exact KL and exact gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LENGTH_BUCKETS, AnswerLabel, Response, VideoSample
from .errors import ShapeMismatch, TooFewFrames

N_FEATURES = 6
FEATURE_NAMES = (
    "mean_step",
    "var_step",
    "delta_autocorr_lag2",
    "hf_energy",
    "duplication",
    "reversal_symmetry",
)


def featurize(sample: VideoSample | np.ndarray) -> np.ndarray:
    """Summary statistics of frame-to-frame motion.

    The duplication score compares frame ``t`` with frame ``t+k``; for each
    lag ``k`` it averages similarity over the best run of ``k`` consecutive
    pairs, so a copied segment of length ``k`` scores exactly 1.
    """
    x = np.asarray(sample.frames if isinstance(sample, VideoSample) else sample, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise TooFewFrames("featurize needs at least 3 frames")
    t = x.shape[0]
    d = np.diff(x, axis=0)
    sq = np.einsum("ij,ij->i", d, d)
    dist = np.sqrt(sq)

    denom = sq.sum()
    if t >= 4 and denom > 0:
        autocorr = float(np.einsum("ij,ij->", d[:-2], d[2:]) / denom)
    else:
        autocorr = 0.0

    dd = np.diff(x, n=2, axis=0)
    hf = float(np.sqrt(np.einsum("ij,ij->i", dd, dd).mean()))

    scale = sq.mean()
    dup = 0.0
    for k in range(2, t // 2 + 1):
        diff = x[k:] - x[:-k]
        e = np.einsum("ij,ij->i", diff, diff)
        sim = np.exp(-e / scale) if scale > 0 else (e == 0).astype(np.float64)
        run = np.convolve(sim, np.ones(k), mode="valid") / k
        dup = max(dup, float(run.max()))

    flat = d.ravel()
    rev = d[::-1].ravel()
    if flat.std() > 0:
        reversal = float(np.corrcoef(flat, rev)[0, 1])
    else:
        reversal = 0.0

    return np.array([dist.mean(), dist.var(), autocorr, hf, dup, reversal])


@dataclass(frozen=True, eq=False)
class PolicyParams:
    weights: np.ndarray
    bias: np.ndarray
    length_logits: np.ndarray
    classes: tuple[AnswerLabel, ...]

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        ll = np.array(self.length_logits, dtype=np.float64)
        k = len(self.classes)
        if w.ndim != 2 or w.shape[0] != k or b.shape != (k,) or ll.shape != (len(LENGTH_BUCKETS),):
            raise ShapeMismatch(
                f"weights {w.shape}, bias {b.shape}, length_logits {ll.shape} for {k} classes"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all() and np.isfinite(ll).all()):
            raise ValueError("non-finite policy parameters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "length_logits", ll)
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def zeros(cls, classes: Sequence[AnswerLabel], n_features: int = N_FEATURES) -> "PolicyParams":
        k = len(classes)
        return cls(np.zeros((k, n_features)), np.zeros(k), np.zeros(len(LENGTH_BUCKETS)), tuple(classes))

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size + self.length_logits.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias, self.length_logits])

    def with_flat(self, vec) -> "PolicyParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeMismatch(f"expected flat vector of size {self.size}, got {vec.shape}")
        nw = self.weights.size
        k = len(self.classes)
        return PolicyParams(
            vec[:nw].reshape(self.weights.shape),
            vec[nw : nw + k],
            vec[nw + k :],
            self.classes,
        )

    def class_index(self, label: AnswerLabel) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ShapeMismatch(f"answer {label} is not a policy class") from None


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_features(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != params.n_features:
        raise ShapeMismatch(f"{f.shape[-1]} features for a policy expecting {params.n_features}")
    return f


def answer_logprobs(params: PolicyParams, features) -> np.ndarray:
    """Log-probabilities of every answer class; batched over leading axes."""
    f = _check_features(params, features)
    return _log_softmax(f @ params.weights.T + params.bias)


def length_logprobs(params: PolicyParams) -> np.ndarray:
    return _log_softmax(params.length_logits)


def logprob(params: PolicyParams, features, response: Response) -> float:
    a = answer_logprobs(params, features)[params.class_index(response.answer)]
    l = length_logprobs(params)[LENGTH_BUCKETS.index(response.length_bucket)]
    return float(a + l)


def backprop(params: PolicyParams, features, d_answer_logits, d_length_logits) -> np.ndarray:
    """Flat parameter gradient from gradients on the two heads' logits.

    ``features`` is (B, F), ``d_answer_logits`` is (B, K) and
    ``d_length_logits`` is (3,) already summed over the batch.
    """
    f = np.atleast_2d(features)
    da = np.atleast_2d(d_answer_logits)
    dw = da.T @ f
    db = da.sum(axis=0)
    return np.concatenate([dw.ravel(), db, np.asarray(d_length_logits, dtype=np.float64)])


def grad_logprob(params: PolicyParams, features, response: Response) -> PolicyParams:
    f = _check_features(params, features)
    p_ans = np.exp(answer_logprobs(params, f))
    p_len = np.exp(length_logprobs(params))
    da = -p_ans
    da[params.class_index(response.answer)] += 1.0
    dl = -p_len
    dl[LENGTH_BUCKETS.index(response.length_bucket)] += 1.0
    return params.with_flat(backprop(params, f, da, dl))


def response_space(classes: Sequence[AnswerLabel]) -> list[Response]:
    """Every (answer, length bucket) response, answer-major."""
    return [Response(a, b) for a in classes for b in LENGTH_BUCKETS]


def response_distribution(params: PolicyParams, features) -> np.ndarray:
    """Probabilities over ``response_space(params.classes)``."""
    pa = np.exp(answer_logprobs(params, features))
    pl = np.exp(length_logprobs(params))
    return np.outer(pa, pl).ravel()


def _draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)


def draw(answer_lp: np.ndarray, length_lp: np.ndarray, g: int, rng: np.random.Generator):
    """Draw ``g`` (answer index, bucket index) pairs from precomputed head log-probabilities."""
    if g < 1:
        raise ValueError("group size must be at least 1")
    ai = _draw(np.cumsum(np.exp(answer_lp)), rng.random(g))
    li = _draw(np.cumsum(np.exp(length_lp)), rng.random(g))
    return ai, li, np.minimum(answer_lp[ai] + length_lp[li], 0.0)


def sample_indices(params: PolicyParams, features, g: int, rng: np.random.Generator):
    """Draw ``g`` (answer index, bucket index) pairs and their log-probabilities."""
    return draw(answer_logprobs(params, features), length_logprobs(params), g, rng)


def sample_group(params: PolicyParams, features, g: int, rng: np.random.Generator) -> list[Response]:
    ai, li, lp = sample_indices(params, features, g, rng)
    return [
        Response(params.classes[a], LENGTH_BUCKETS[l], logprob=float(p))
        for a, l, p in zip(ai, li, lp)
    ]


def greedy_answer(params: PolicyParams, features) -> AnswerLabel:
    return params.classes[int(np.argmax(answer_logprobs(params, features)))]


def snapshot(params: PolicyParams) -> PolicyParams:
    """Read-only deep copy, used as the frozen reference policy."""
    frozen = PolicyParams(params.weights.copy(), params.bias.copy(), params.length_logits.copy(), params.classes)
    for arr in (frozen.weights, frozen.bias, frozen.length_logits):
        arr.setflags(write=False)
    return frozen


def kl_to_reference(params: PolicyParams, ref: PolicyParams, features) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact KL(theta || ref) over the response space, batched over inputs.

    The two heads are independent, so the KL splits into an answer term per
    input and one shared length term. Returns ``(kl, d_answer_logits,
    d_length_logits)`` with ``kl`` of shape (B,) and the logit gradients of
    ``kl.sum()``.
    """
    f = np.atleast_2d(features)
    la, la_ref = answer_logprobs(params, f), answer_logprobs(ref, f)
    ll, ll_ref = length_logprobs(params), length_logprobs(ref)
    pa, pl = np.exp(la), np.exp(ll)
    kl_a = (pa * (la - la_ref)).sum(axis=1)
    kl_l = float((pl * (ll - ll_ref)).sum())
    # d KL(softmax(z) || q) / dz = p * (log p - log q - KL)
    da = pa * (la - la_ref - kl_a[:, None])
    dl = pl * (ll - ll_ref - kl_l) * f.shape[0]
    return kl_a + kl_l, da, dl
