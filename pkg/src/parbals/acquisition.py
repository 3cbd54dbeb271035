"""Acquisition scores and batch selection rules.

All scores are computed from predictive tensors of shape ``(k, n, c)``: the
class probabilities of ``n`` points under ``k`` posterior weight samples.
Mutual informations are plug-in estimates in nats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import rng as _rng
from .bayes_linear import PredictiveTensor, predict

logger = logging.getLogger(__name__)

JOINT_CAP = 4096
DEFAULT_VAL_SUBSAMPLE = 500
SCORE_KINDS = ("confidence", "bald", "epig", "bait-marginal")
STOCHASTIC_VARIANTS = ("power", "softmax", "softrank")

# upper bound on floats held by one chunk of pairwise joint tables
_CHUNK_FLOATS = 1 << 22


class BatchTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Scores:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)


def _values(scores):
    return scores.values if isinstance(scores, Scores) else np.asarray(scores, dtype=np.float64)


def _probs(tensor):
    return tensor.probs if isinstance(tensor, PredictiveTensor) else np.asarray(tensor, dtype=np.float64)


def entropy(p, axis=-1):
    """Shannon entropy in nats; ``0 ln 0 = 0``."""
    return _kernels.entropy(p, axis=axis)


def confidence_scores(bma):
    """Least-confidence uncertainty ``1 - max_y p[y]`` per row."""
    return 1.0 - np.asarray(bma, dtype=np.float64).max(axis=-1)


def confidence_score(bma_row):
    return float(confidence_scores(np.asarray(bma_row)[None])[0])


def bald_scores(tensor):
    """``H(mean_j p_j) - mean_j H(p_j)`` for every point of the tensor."""
    probs = _probs(tensor)
    return np.maximum(entropy(probs.mean(axis=0)) - entropy(probs).mean(axis=0), 0.0)


def bald_score(tensor, i):
    probs = _probs(tensor)
    return float(bald_scores(probs[:, [i]])[0])


def pairwise_joint(probs_a, probs_b):
    """Plug-in joint ``(1/k) sum_j p_j(a) p_j(b)^T`` of two points; ``(c, c)``."""
    probs_a = np.asarray(probs_a, dtype=np.float64)
    probs_b = np.asarray(probs_b, dtype=np.float64)
    return probs_a.T @ probs_b / probs_a.shape[0]


def pairwise_mi(tensor_pair):
    """MI between the labels of the two points held in a ``(k, 2, c)`` tensor."""
    probs = _probs(tensor_pair)
    if probs.shape[1] != 2:
        raise ValueError(f"expected a tensor over exactly two points, got {probs.shape[1]}")
    joint = pairwise_joint(probs[:, 0], probs[:, 1])
    return float(_kernels.mi_from_joint(joint[:, :, None])[0])


def pairwise_mi_matrix(val_probs, pool_probs):
    """MI for every (validation, candidate) pair; shape ``(n_val, n_pool)``.

    Only the leading ``(c-1) x (c-1)`` block of each plug-in joint is formed by
    matrix products; the kernel fills the rest from the marginals.
    """
    val_probs = np.asarray(val_probs, dtype=np.float64)
    pool_probs = np.asarray(pool_probs, dtype=np.float64)
    k, nv, c = val_probs.shape
    n = pool_probs.shape[1]
    cm = c - 1
    row = val_probs.mean(axis=0)
    col = pool_probs.mean(axis=0)
    out = np.empty((nv, n))
    chunk = max(1, _CHUNK_FLOATS // max(1, cm * cm * nv))
    # (c, k, nv) / (c, k, n) so each class pair is one contiguous GEMM
    va = np.ascontiguousarray(val_probs.transpose(2, 0, 1)[:cm])
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        pa = np.ascontiguousarray(pool_probs[:, start:stop].transpose(2, 0, 1)[:cm])
        block = np.empty((cm, cm, nv, stop - start))
        for a in range(cm):
            for b in range(cm):
                np.matmul(va[a].T, pa[b], out=block[a, b])
        block /= k
        out[:, start:stop] = _kernels.mi_from_block(block, row, col[start:stop])
    return out


def epig_scores(pool_probs, val_probs):
    """Mean pairwise MI between each candidate and the validation points."""
    return pairwise_mi_matrix(_probs(val_probs), _probs(pool_probs)).mean(axis=0)


def validation_subsample(n_val, size, seed, iteration=0):
    """Uniform subset without replacement, sorted; all of ``V`` when ``size >= n_val``."""
    if size is None or size >= n_val:
        return np.arange(n_val)
    if size < 1:
        raise ValueError(f"val_subsample must be >= 1, got {size}")
    g = _rng.generator(seed, _rng.VAL_SUBSAMPLE, iteration)
    return np.sort(g.choice(n_val, size=size, replace=False))


def epig_score(ensemble, candidate, validation, val_subsample=None, seed=0, iteration=0):
    """EPIG of one candidate point against the (optionally subsampled) validation set."""
    V = np.asarray(getattr(validation, "X", validation), dtype=np.float64)
    if V.shape[0] == 0:
        raise ValueError("validation set is empty")
    V = V[validation_subsample(V.shape[0], val_subsample, seed, iteration)]
    cand, _ = predict(ensemble, np.atleast_2d(np.asarray(candidate, dtype=np.float64)))
    val, _ = predict(ensemble, V)
    return float(epig_scores(cand.probs, val.probs)[0])


# ---------------------------------------------------------------------------
# BatchBALD


def _config_table(probs, cap):
    """Per-sample probability of every joint label configuration; ``(k, c^n)``."""
    k, n, c = probs.shape
    if c ** n > cap:
        raise BatchTooLargeError(
            f"{c}^{n} = {c ** n} joint configurations exceeds the cap of {cap}; "
            "use parbals-epig for large batches"
        )
    table = np.ones((k, 1))
    for t in range(n):
        table = (table[:, :, None] * probs[:, t, None, :]).reshape(k, -1)
    return table


def batchbald_joint_mi(tensor, joint_cap=JOINT_CAP):
    """Plug-in ``I(Y_batch; W)`` for all points of the tensor taken together."""
    probs = _probs(tensor)
    table = _config_table(probs, joint_cap)
    joint_h = float(entropy(table.mean(axis=0)))
    cond_h = float(entropy(probs).sum(axis=1).mean())
    return max(joint_h - cond_h, 0.0)


def batchbald_select(pool_probs, B, joint_cap=JOINT_CAP):
    """Greedy BatchBALD over the pool; returns ``(batch, gains)``."""
    probs = _probs(pool_probs)
    k, n, c = probs.shape
    if B > n:
        raise ValueError(f"batch size {B} exceeds pool size {n}")
    if B and c ** B > joint_cap:
        raise BatchTooLargeError(
            f"{c}^{B} = {c ** B} joint configurations exceeds the cap of {joint_cap}; "
            "use parbals-epig for large batches"
        )
    sample_h = entropy(probs)  # (k, n)
    table = np.ones((k, 1))
    cond_s = np.zeros(k)
    chosen, values = [], []
    available = np.ones(n, dtype=bool)
    flat = probs.reshape(k, n * c)
    for _ in range(B):
        C = table.shape[1]
        joint = (table.T @ flat / k).reshape(C, n, c)
        joint_h = entropy(joint.transpose(1, 0, 2).reshape(n, C * c))
        mi = joint_h - (cond_s[:, None] + sample_h).mean(axis=0)
        mi = np.where(available, mi, -np.inf)
        best = int(np.argmax(mi))
        chosen.append(best)
        values.append(float(mi[best]))
        available[best] = False
        table = (table[:, :, None] * probs[:, best, None, :]).reshape(k, -1)
        cond_s = cond_s + sample_h[:, best]
    return chosen, values


# ---------------------------------------------------------------------------
# batch selection rules


def select_top_b(scores, B):
    """Indices of the ``B`` largest scores, best first; ties go to the lower index."""
    values = _values(scores)
    if B > len(values):
        raise ValueError(f"batch size {B} exceeds pool size {len(values)}")
    if B < 0:
        raise ValueError(f"batch size must be non-negative, got {B}")
    order = np.argsort(-values, kind="stable")
    return [int(i) for i in order[:B]]


def _ranks(values):
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values))
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def stochastic_keys(scores, variant, beta=1.0, seed=0, iteration=0, point_ids=None, noise=True):
    """Gumbel-perturbed keys whose top-B is the stochastic batch.

    power: ``ln s + g / beta``; softmax: ``s + g / beta``;
    softrank: ``-ln rank + g / beta`` (rank 1 is the best score).
    """
    values = _values(scores)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if variant == "power":
        if np.any(values <= 0):
            logger.warning("power variant: clamping %d non-positive scores to 1e-12",
                           int(np.sum(values <= 0)))
        base = np.log(np.maximum(values, 1e-12))
    elif variant == "softmax":
        base = values.copy()
    elif variant == "softrank":
        base = -np.log(_ranks(values))
    else:
        raise ValueError(f"unknown stochastic variant {variant!r}")
    if not noise:
        return base
    ids = np.arange(len(values)) if point_ids is None else np.asarray(point_ids)
    return base + _rng.gumbel(seed, iteration, ids) / beta


def select_stochastic(scores, B, variant, beta=1.0, seed=0, iteration=0, point_ids=None,
                      noise=True):
    """Top-B of :func:`stochastic_keys`; deterministic for a fixed seed."""
    keys = stochastic_keys(scores, variant, beta, seed, iteration, point_ids, noise)
    return select_top_b(keys, B)
