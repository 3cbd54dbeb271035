"""Partial Batch Label Sampling (ParBaLS) for EPIG.

The batch is built one point at a time.  Each of ``m`` pseudo-label
universes holds a label for every pool point, drawn once up front from the
current posterior predictive, and a model refit on the labeled set plus the
pseudo-labeled points committed so far.  The next point maximizes the EPIG
score averaged over universes, each universe scored under its own model.

Universe models with identical pseudo-label histories are identical, so they
are stored once and shared; the refit counter still counts one update per
universe per committed point.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .acquisition import epig_scores, pairwise_mi_matrix, validation_subsample
from .bayes_linear import (
    ConvergenceError,
    DEFAULT_TOL,
    Prior,
    laplace_posterior,
    predict,
)

logger = logging.getLogger(__name__)

VARIANTS = ("sampled", "map")
COUPLINGS = ("independent", "per_universe_weight")
EXACT_CAP = 256


@dataclass(frozen=True)
class ParbalsConfig:
    B: int
    m: int = 8
    variant: str = "sampled"
    val_subsample: int | None = 500
    seed: int = 0
    iteration: int = 0
    coupling: str = "independent"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.variant == "map" and self.m != 1:
            object.__setattr__(self, "m", 1)
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.B < 0:
            raise ValueError(f"B must be >= 0, got {self.B}")


def _categorical(probs, u):
    """Inverse-CDF draw per row; ``u`` in (0, 1)."""
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((u[..., None] > cdf).sum(axis=-1), probs.shape[-1] - 1)


@dataclass
class PseudoLabelUniverses:
    """Sampled label assignments over the pool plus one model per universe.

    ``assignments[i, x]`` is universe ``i``'s label for pool row ``x``.
    ``models`` maps a pseudo-label history (tuple of labels for the
    committed points, in commit order) to the ensemble fit on it.
    """

    assignments: np.ndarray
    L_X: np.ndarray
    L_y: np.ndarray
    D_X: np.ndarray
    num_classes: int
    prior: Prior
    k: int
    sample_seed: tuple
    tol: float = DEFAULT_TOL
    committed: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    refits: int = 0
    fits: int = 0

    @property
    def m(self):
        return self.assignments.shape[0]

    def history(self, i):
        return tuple(int(v) for v in self.assignments[i, self.committed])

    def model(self, i):
        return self.models[self.history(i)]

    def groups(self):
        """Distinct histories with their universe ids, ordered by first universe."""
        out = {}
        for i in range(self.m):
            out.setdefault(self.history(i), []).append(i)
        return list(out.items())

    def commit(self, idx):
        """Add pool row ``idx`` to the partial batch and update every universe."""
        idx = int(idx)
        if idx in self.committed:
            raise ValueError(f"pool row {idx} already committed")
        parents = {i: self.history(i) for i in range(self.m)}
        self.committed.append(idx)
        X_s = self.D_X[self.committed]
        for i in range(self.m):
            key = self.history(i)
            self.refits += 1
            if key in self.models:
                continue
            y_s = np.asarray(key, dtype=np.int64)
            try:
                self.models[key] = laplace_posterior(
                    np.vstack([self.L_X, X_s]),
                    np.concatenate([self.L_y, y_s]),
                    self.num_classes,
                    self.prior,
                    k=self.k,
                    seed=self.sample_seed,
                    tol=self.tol,
                    init=self.models[parents[i]].map.theta,
                )
            except ConvergenceError as exc:
                exc.universe = i
                raise ConvergenceError(f"universe {i}: {exc}", exc.grad_norm, i) from exc
            self.fits += 1
        live = {self.history(i) for i in range(self.m)}
        for key in [k for k in self.models if k not in live]:
            del self.models[key]


def sample_universes(ensemble, L_X, L_y, D_X, config, prior, tol=DEFAULT_TOL):
    """Draw pseudo-label universes over ``D_X`` from the posterior predictive.

    ``sampled`` + ``independent``: each label from its own BMA marginal.
    ``sampled`` + ``per_universe_weight``: universe ``i`` picks one posterior
    weight sample and draws all labels from that model's predictive.
    ``map``: one universe holding the BMA argmax (ties to the lowest class).
    """
    D_X = np.asarray(D_X, dtype=np.float64)
    tensor, bma = predict(ensemble, D_X)
    n = D_X.shape[0]
    if config.variant == "map":
        assignments = np.argmax(bma, axis=1)[None, :]
    else:
        assignments = np.empty((config.m, n), dtype=np.int64)
        for i in range(config.m):
            g = _rng.generator(config.seed, _rng.PSEUDO_LABELS, config.iteration, i)
            if config.coupling == "independent":
                probs = bma
            else:
                probs = tensor.probs[g.integers(ensemble.k)]
            assignments[i] = _categorical(probs, g.random(n))
    return PseudoLabelUniverses(
        assignments=assignments.astype(np.int64),
        L_X=np.asarray(L_X, dtype=np.float64).reshape(-1, D_X.shape[1]),
        L_y=np.asarray(L_y, dtype=np.int64),
        D_X=D_X,
        num_classes=ensemble.num_classes,
        prior=prior,
        k=ensemble.k,
        sample_seed=ensemble.seed,
        tol=tol,
        models={(): ensemble},
    )


def universe_scores(universes, remaining, V_X):
    """EPIG of every remaining row under each universe's model; ``(m, |remaining|)``."""
    remaining = np.asarray(remaining, dtype=np.int64)
    out = np.empty((universes.m, len(remaining)))
    for key, members in universes.groups():
        model = universes.models[key]
        pool_t, _ = predict(model, universes.D_X[remaining])
        val_t, _ = predict(model, V_X)
        out[members] = epig_scores(pool_t.probs, val_t.probs)
    return out


def parbals_next(universes, remaining, V_X):
    """Index (into ``remaining``'s values) maximizing the universe-averaged EPIG.

    Returns ``(chosen_row, mean_scores, per_universe_scores)``.  The average is
    reduced group by group in first-universe order, so a single shared model
    reproduces plain EPIG bit for bit.
    """
    remaining = np.asarray(remaining, dtype=np.int64)
    if len(remaining) == 0:
        raise ValueError("no remaining pool points")
    per = universe_scores(universes, remaining, V_X)
    mean = np.zeros(len(remaining))
    for _, members in universes.groups():
        mean += (len(members) / universes.m) * per[members[0]]
    best = int(np.argmax(mean))
    return int(remaining[best]), mean, per


def parbals_select(ensemble, L_X, L_y, D_X, V_X, config, prior, tol=DEFAULT_TOL,
                   candidates=None):
    """Build a batch of ``config.B`` rows of ``D_X`` (returned in selection order).

    ``V_X`` should already be subsampled.  ``candidates`` restricts the rows
    eligible for selection (default: all).  Returns ``(batch, trace, universes)``
    where ``trace`` holds one audit record per committed point.
    """
    D_X = np.asarray(D_X, dtype=np.float64)
    remaining = list(range(D_X.shape[0])) if candidates is None else [int(c) for c in candidates]
    if config.B > len(remaining):
        raise ValueError(f"batch size {config.B} exceeds pool size {len(remaining)}")
    universes = sample_universes(ensemble, L_X, L_y, D_X, config, prior, tol=tol)
    batch, trace = [], []
    for step in range(config.B):
        chosen, mean, per = parbals_next(universes, remaining, V_X)
        pos = remaining.index(chosen)
        trace.append({
            "step": step,
            "chosen_row": chosen,
            "mean_score": float(mean[pos]),
            "per_universe_scores": [float(v) for v in per[:, pos]],
            "pseudo_labels": [int(v) for v in universes.assignments[:, chosen]],
        })
        batch.append(chosen)
        remaining.pop(pos)
        universes.commit(chosen)
    return batch, trace, universes


# ---------------------------------------------------------------------------
# exact-enumeration oracle


@dataclass(frozen=True)
class ExactTable:
    """Per-assignment EPIG sums for every candidate, with assignment weights."""

    assignments: np.ndarray  # (A, |S|)
    weights: np.ndarray  # (A,)
    values: np.ndarray  # (A, n_candidates), sum over V of pairwise MI
    candidates: np.ndarray

    @property
    def objective(self):
        return self.weights @ self.values


def exact_parbals_table(ensemble, L_X, L_y, D_X, V_X, S, prior, candidates=None,
                        tol=DEFAULT_TOL, cap=EXACT_CAP):
    """Enumerate every label assignment of ``S`` under the product of BMA marginals.

    Each assignment gets a cold refit on ``L`` plus the labeled ``S`` (same
    posterior sampling stream as ``ensemble``) and the candidates' summed
    pairwise MI against ``V_X``.
    """
    D_X = np.asarray(D_X, dtype=np.float64)
    S = [int(s) for s in S]
    c = ensemble.num_classes
    if c ** len(S) > cap:
        raise ValueError(f"{c}^{len(S)} assignments exceeds the enumeration cap {cap}")
    if candidates is None:
        candidates = [i for i in range(D_X.shape[0]) if i not in S]
    candidates = np.asarray(candidates, dtype=np.int64)
    L_X = np.asarray(L_X, dtype=np.float64).reshape(-1, D_X.shape[1])
    L_y = np.asarray(L_y, dtype=np.int64)
    _, bma = predict(ensemble, D_X[S]) if S else (None, np.zeros((0, c)))
    combos = list(itertools.product(range(c), repeat=len(S)))
    weights = np.array([np.prod([bma[t, y] for t, y in enumerate(combo)]) for combo in combos])
    values = np.empty((len(combos), len(candidates)))
    for a, combo in enumerate(combos):
        if S:
            model = laplace_posterior(
                np.vstack([L_X, D_X[S]]),
                np.concatenate([L_y, np.asarray(combo, dtype=np.int64)]),
                c, prior, k=ensemble.k, seed=ensemble.seed, tol=tol,
            )
        else:
            model = ensemble
        pool_t, _ = predict(model, D_X[candidates])
        val_t, _ = predict(model, V_X)
        values[a] = pairwise_mi_matrix(val_t.probs, pool_t.probs).sum(axis=0)
    return ExactTable(np.asarray(combos, dtype=np.int64).reshape(len(combos), len(S)),
                      weights, values, candidates)


def exact_parbals_objective(ensemble, L_X, L_y, D_X, V_X, S, x_hat, prior, tol=DEFAULT_TOL):
    """``E_{y_S}[sum_{x in V} I(Y_x; Y_xhat | Y_S = y_S, L)]`` by enumeration."""
    table = exact_parbals_table(ensemble, L_X, L_y, D_X, V_X, S, prior, candidates=[x_hat], tol=tol)
    return float(table.objective[0])
