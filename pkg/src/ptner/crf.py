"""Linear-chain CRF over a fixed tag inventory.

A tag path ``y`` of length ``T`` scores

    start[y0] + sum_i e[i, y_i] + sum_{i>0} trans[y_{i-1}, y_i] + end[y_{T-1}]

and ``p(y | e) = exp(score(y) - log Z)``.  The normalizer is computed with
the forward recursion in log space; marginals and gradients come from
forward-backward.  Everything here is plain float64 numpy.

Forbidden transitions are handled with true ``-inf`` entries.  They only
ever enter ``max`` or ``logsumexp`` (which shifts by the row max and skips
all-``-inf`` rows), so no ``inf - inf`` is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import TagSet, split_tag


@dataclass
class CrfParams:
    transitions: np.ndarray  # (K, K), [i, j] scores i -> j
    start: np.ndarray  # (K,)
    end: np.ndarray  # (K,)

    @classmethod
    def zeros(cls, num_tags: int) -> "CrfParams":
        return cls(
            np.zeros((num_tags, num_tags)), np.zeros(num_tags), np.zeros(num_tags)
        )

    @property
    def num_tags(self) -> int:
        return self.start.shape[0]


@dataclass
class ConstraintMask:
    allowed: np.ndarray  # (K, K) bool
    allowed_start: np.ndarray  # (K,) bool
    allowed_end: np.ndarray  # (K,) bool

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        self.allowed_start = np.asarray(self.allowed_start, dtype=bool)
        self.allowed_end = np.asarray(self.allowed_end, dtype=bool)
        if not self.allowed.any(axis=1).all():
            raise ValueError("every tag needs at least one allowed successor")
        if not self.allowed_start.any():
            raise ValueError("no tag is allowed to start a sequence")

    @classmethod
    def unconstrained(cls, num_tags: int) -> "ConstraintMask":
        return cls(
            np.ones((num_tags, num_tags), bool),
            np.ones(num_tags, bool),
            np.ones(num_tags, bool),
        )


@dataclass
class CrfGrad:
    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray


class NoAllowedPathError(ValueError):
    pass


def _check(e: np.ndarray, p: CrfParams, tags=None) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValueError(f"emissions must be (T>=1, K), got shape {e.shape}")
    if e.shape[1] != p.num_tags:
        raise ValueError(f"emissions have {e.shape[1]} tags, params {p.num_tags}")
    if tags is not None:
        if len(tags) != e.shape[0]:
            raise ValueError(f"{len(tags)} tags for {e.shape[0]} positions")
        for t in tags:
            if not 0 <= t < p.num_tags:
                raise IndexError(f"tag index {t} out of range [0, {p.num_tags})")
    return e


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def score_sequence(e, p: CrfParams, tags) -> float:
    e = _check(e, p, tags)
    tags = np.asarray(tags, dtype=int)
    s = p.start[tags[0]] + e[np.arange(len(tags)), tags].sum()
    s += p.transitions[tags[:-1], tags[1:]].sum()
    return float(s + p.end[tags[-1]])


def _forward(e: np.ndarray, p: CrfParams) -> np.ndarray:
    T = e.shape[0]
    alpha = np.empty_like(e)
    alpha[0] = p.start + e[0]
    for i in range(1, T):
        alpha[i] = logsumexp(alpha[i - 1][:, None] + p.transitions, axis=0) + e[i]
    return alpha


def _backward(e: np.ndarray, p: CrfParams) -> np.ndarray:
    # beta[i, k]: log-sum over completions after position i given y_i = k,
    # excluding e[i, k].
    T = e.shape[0]
    beta = np.empty_like(e)
    beta[-1] = p.end
    for i in range(T - 2, -1, -1):
        beta[i] = logsumexp(p.transitions + (e[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def log_partition(e, p: CrfParams) -> float:
    e = _check(e, p)
    alpha = _forward(e, p)
    return float(logsumexp(alpha[-1] + p.end))


def nll(e, p: CrfParams, tags) -> float:
    return log_partition(e, p) - score_sequence(e, p, tags)


def marginals_and_grad(e, p: CrfParams, tags) -> tuple[np.ndarray, CrfGrad, float]:
    """Posterior unary marginals, gradient of the nll, and the nll itself.

    ``d nll / d e[i, k] = P(y_i = k) - [tags[i] == k]``; the transition,
    start and end gradients are the analogous expected-minus-observed counts.
    """
    e = _check(e, p, tags)
    tags = np.asarray(tags, dtype=int)
    T, K = e.shape
    alpha = _forward(e, p)
    beta = _backward(e, p)
    log_z = float(logsumexp(alpha[-1] + p.end))

    unary = np.exp(alpha + beta - log_z)
    g_trans = np.zeros((K, K))
    for i in range(1, T):
        pair = alpha[i - 1][:, None] + p.transitions + (e[i] + beta[i])[None, :]
        g_trans += np.exp(pair - log_z)

    g_e = unary.copy()
    g_e[np.arange(T), tags] -= 1.0
    np.subtract.at(g_trans, (tags[:-1], tags[1:]), 1.0)
    g_start = unary[0].copy()
    g_start[tags[0]] -= 1.0
    g_end = unary[-1].copy()
    g_end[tags[-1]] -= 1.0

    value = log_z - score_sequence(e, p, tags)
    return unary, CrfGrad(g_e, g_trans, g_start, g_end), value


def _masked(p: CrfParams, c: ConstraintMask | None):
    if c is None:
        return p.transitions, p.start, p.end
    neg = -np.inf
    return (
        np.where(c.allowed, p.transitions, neg),
        np.where(c.allowed_start, p.start, neg),
        np.where(c.allowed_end, p.end, neg),
    )


def viterbi(e, p: CrfParams, c: ConstraintMask | None = None) -> tuple[list[int], float]:
    """Best path under the constraint mask.

    Among equal-scoring paths the lexicographically smallest tag-index
    sequence wins: best suffix scores are computed right to left, then the
    path is read off left to right taking the smallest index that attains
    the maximum at each step.
    """
    e = _check(e, p)
    trans, start, end = _masked(p, c)
    T, K = e.shape
    suffix = np.empty_like(e)  # best score of positions i..T-1 given y_i
    suffix[-1] = e[-1] + end
    for i in range(T - 2, -1, -1):
        suffix[i] = e[i] + np.max(trans + suffix[i + 1][None, :], axis=1)

    total = start + suffix[0]
    best = float(np.max(total))
    if best == -np.inf:
        raise NoAllowedPathError("the constraint mask admits no tag path")
    path = [int(np.argmax(total))]  # argmax returns the first maximum
    for i in range(1, T):
        path.append(int(np.argmax(trans[path[-1]] + suffix[i])))
    return path, best


def bio_constraint_mask(tagset: TagSet) -> ConstraintMask:
    """Forbid ``I-X`` at the start and after anything other than ``B-X``/``I-X``."""
    K = len(tagset)
    allowed = np.ones((K, K), bool)
    allowed_start = np.ones(K, bool)
    for j, tag in enumerate(tagset.tags):
        prefix, t = split_tag(tag)
        if prefix != "I":
            continue
        allowed_start[j] = False
        for i, prev in enumerate(tagset.tags):
            allowed[i, j] = prev in (f"B-{t}", f"I-{t}")
    return ConstraintMask(allowed, allowed_start, np.ones(K, bool))
