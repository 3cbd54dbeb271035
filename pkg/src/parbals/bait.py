"""BAIT: greedy minimization of ``Tr(A^{-1} G)``.

``A`` is the Hessian of the regularized loss on the labeled set plus the
points selected so far, ``G`` the average pool Hessian, both evaluated at the
MAP of the labeled set.  Neither depends on labels.  Adding a point adds a
rank-``c`` block ``U U^T`` to ``A``, so each greedy step is a ``c x c``
Woodbury update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import rng as _rng
from .bayes_linear import WeightPoint, augment, data_hessian, map_probs

MAX_CONDITION = 1e12


class IllConditionedError(linalg.LinAlgError):
    pass


@dataclass
class BaitState:
    A: np.ndarray
    G: np.ndarray
    chosen: list = field(default_factory=list)

    @property
    def P(self):
        return self.A.shape[0]


def _check_conditioning(A):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(
            f"candidate Hessian condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}; "
            "use a smaller prior variance"
        )


def bait_objective(state):
    """``Tr(A^{-1} G)`` via a Cholesky solve."""
    _check_conditioning(state.A)
    factor = linalg.cho_factor(state.A, lower=True)
    return float(np.trace(linalg.cho_solve(factor, state.G)))


def fisher_blocks(point, X):
    """Per-point factors ``U_x`` with ``U_x U_x^T`` the point's Fisher block; ``(n, P, c)``.

    Uses ``diag(p) - p p^T = R R^T`` with ``R = diag(sqrt p) - p sqrt(p)^T``.
    """
    probs = map_probs(point, X)
    n, c = probs.shape
    sq = np.sqrt(probs)
    R = -probs[:, :, None] * sq[:, None, :]
    idx = np.arange(c)
    R[:, idx, idx] += sq
    Xa = augment(X)
    U = np.einsum("nab,ni->naib", R, Xa)
    return U.reshape(n, c * Xa.shape[1], c)


def bait_state(point, L_X, D_X, prior, pool_subsample=None, seed=0):
    """Initial state: ``A = H_L + I / var``, ``G = mean_{x in D} H_x``.

    ``pool_subsample`` estimates ``G`` from a seeded uniform subset of ``D``.
    """
    if not isinstance(point, WeightPoint):
        point = getattr(point, "map")
    theta = point.theta
    D_X = np.asarray(D_X, dtype=np.float64)
    L_X = np.asarray(L_X, dtype=np.float64).reshape(-1, D_X.shape[1])
    A = prior.precision * np.eye(theta.size)
    if len(L_X):
        A = A + data_hessian(augment(L_X), map_probs(point, L_X))
    G_rows = D_X
    if pool_subsample is not None and pool_subsample < len(D_X):
        pick = _rng.generator(seed, _rng.RANDOM_ACQ, 0xBA17).choice(len(D_X), pool_subsample, replace=False)
        G_rows = D_X[np.sort(pick)]
    G = data_hessian(augment(G_rows), map_probs(point, G_rows)) / max(1, len(G_rows))
    return BaitState(A, G)


def candidate_objectives(Ainv, G, U):
    """Objective after adding each candidate's block, given ``A^{-1}``; ``(n,)``."""
    W = np.einsum("pq,nqc->npc", Ainv, U)
    c = U.shape[2]
    S = np.eye(c)[None] + np.einsum("npc,npd->ncd", U, W)
    T = np.einsum("npc,pq,nqd->ncd", W, G, W)
    drop = np.trace(np.linalg.solve(S, T), axis1=1, axis2=2)
    base = float(np.sum(Ainv * G.T))
    return base - drop, W, S


def bait_greedy(point, L_X, D_X, B, prior, candidates=None, pool_subsample=None, seed=0):
    """Greedy BAIT batch of rows of ``D_X``.

    Returns ``(batch, objectives)`` where ``objectives[0]`` is the value before
    any selection and ``objectives[t + 1]`` after the ``t``-th pick.
    """
    D_X = np.asarray(D_X, dtype=np.float64)
    pool = np.arange(len(D_X)) if candidates is None else np.asarray(candidates, dtype=np.int64)
    if B > len(pool):
        raise ValueError(f"batch size {B} exceeds pool size {len(pool)}")
    state = bait_state(point, L_X, D_X, prior, pool_subsample=pool_subsample, seed=seed)
    objectives = [bait_objective(state)]
    if B == 0:
        return [], objectives
    if not isinstance(point, WeightPoint):
        point = point.map
    U_all = fisher_blocks(point, D_X[pool])
    Ainv = linalg.cho_solve(linalg.cho_factor(state.A, lower=True), np.eye(state.P))
    Ainv = 0.5 * (Ainv + Ainv.T)
    available = np.ones(len(pool), dtype=bool)
    for _ in range(B):
        values, W, S = candidate_objectives(Ainv, state.G, U_all)
        values = np.where(available, values, np.inf)
        best = int(np.argmin(values))
        available[best] = False
        Wb = W[best]
        Ainv = Ainv - Wb @ np.linalg.solve(S[best], Wb.T)
        Ainv = 0.5 * (Ainv + Ainv.T)
        state.A = state.A + U_all[best] @ U_all[best].T
        state.chosen.append(int(pool[best]))
        objectives.append(float(values[best]))
    return state.chosen, objectives
