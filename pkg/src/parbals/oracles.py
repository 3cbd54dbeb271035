"""Brute-force checks behind ``parbals oracle-check``.

Each battery compares a fast code path against an independent slow one:
enumeration of label configurations, dense matrix inverses, or exact
expectation over pseudo-label assignments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .acquisition import bald_score, batchbald_joint_mi, batchbald_select
from .bait import BaitState, bait_greedy, bait_objective, bait_state, fisher_blocks
from .bayes_linear import Prior, laplace_posterior, map_fit
from .dataset import SyntheticSpec, sample_synthetic
from .partial_batch import ParbalsConfig, exact_parbals_table, parbals_next, sample_universes

MC_MS = (1, 4, 16, 64, 256)


@dataclass
class CheckResult:
    name: str
    passed: bool
    lines: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def report(self):
        status = "PASS" if self.passed else "FAIL"
        return "\n".join(self.lines + [f"[{status}] {self.name}"])


# ---------------------------------------------------------------------------
# ParBaLS Monte Carlo vs exact enumeration


@dataclass(frozen=True)
class McInstance:
    ensemble: object
    L_X: np.ndarray
    L_y: np.ndarray
    D_X: np.ndarray
    V_X: np.ndarray
    prior: Prior


def mc_instance(seed, n_labeled=10, n_pool=12, n_val=8, k=50, dim=2, weight_scale=2.0):
    """Binary problem with ``|D| = 12``, ``|V| = 8``, ``k = 50`` posterior samples."""
    spec = SyntheticSpec.random(2, dim, weight_scale, seed, n_labeled + n_pool, n_val, 1)
    X, y = sample_synthetic(spec, seed)
    prior = Prior(1.0)
    L_X, L_y = X[:n_labeled], y[:n_labeled]
    D_X = X[n_labeled:n_labeled + n_pool]
    V_X = X[n_labeled + n_pool:n_labeled + n_pool + n_val]
    ens = laplace_posterior(L_X, L_y, 2, prior, k=k, seed=(seed, 1))
    return McInstance(ens, L_X, L_y, D_X, V_X, prior)


def mc_argmax(inst, S, m, seed):
    """ParBaLS choice after committing ``S`` with ``m`` sampled universes."""
    cfg = ParbalsConfig(B=len(S) + 1, m=m, seed=seed)
    universes = sample_universes(inst.ensemble, inst.L_X, inst.L_y, inst.D_X, cfg, inst.prior)
    for s in S:
        universes.commit(s)
    remaining = [i for i in range(inst.D_X.shape[0]) if i not in S]
    chosen, _, _ = parbals_next(universes, remaining, inst.V_X)
    return chosen


def check_parbals_mc(trials=200, ms=MC_MS, S=(0, 1, 2), tolerance=0.05, floor=0.9):
    """Argmax-match frequency and regret of Monte Carlo ParBaLS vs exact enumeration."""
    S = list(S)
    hits = {m: 0 for m in ms}
    regret = {m: 0.0 for m in ms}
    for trial in range(trials):
        inst = mc_instance(trial)
        table = exact_parbals_table(inst.ensemble, inst.L_X, inst.L_y, inst.D_X, inst.V_X, S,
                                    inst.prior)
        obj = dict(zip(table.candidates.tolist(), table.objective.tolist()))
        best = int(table.candidates[np.argmax(table.objective)])
        for m in ms:
            chosen = mc_argmax(inst, S, m, seed=trial)
            hits[m] += int(chosen == best)
            regret[m] += obj[best] - obj[chosen]
    freq = {m: hits[m] / trials for m in ms}
    regret = {m: regret[m] / trials for m in ms}
    monotone = all(freq[b] >= freq[a] - tolerance for a, b in zip(ms, ms[1:]))
    passed = monotone and freq[ms[-1]] >= floor
    lines = [f"{'m':>5}  {'match':>6}  {'mean regret':>12}"]
    lines += [f"{m:>5}  {freq[m]:6.3f}  {regret[m]:12.3e}" for m in ms]
    lines.append(f"non-decreasing within {tolerance}: {monotone}; "
                 f"match at m={ms[-1]} >= {floor}: {freq[ms[-1]] >= floor}")
    return CheckResult("parbals-mc", passed, lines, {"freq": freq, "regret": regret})


# ---------------------------------------------------------------------------
# BAIT


def random_spd(rng, P, scale=1.0):
    M = rng.normal(size=(P, P))
    return M @ M.T / P + scale * np.eye(P)


def dense_trace_objective(A, G):
    return float(np.trace(np.linalg.inv(A) @ G))


def dense_greedy(point, L_X, D_X, B, prior):
    """Greedy BAIT recomputing ``Tr(inv(A + U U^T) G)`` densely for every candidate."""
    st = bait_state(point, L_X, D_X, prior)
    U = fisher_blocks(point, D_X)
    A = st.A.copy()
    chosen, values = [], []
    for _ in range(B):
        vals = np.full(len(D_X), np.inf)
        for j in range(len(D_X)):
            if j not in chosen:
                vals[j] = dense_trace_objective(A + U[j] @ U[j].T, st.G)
        best = int(np.argmin(vals))
        chosen.append(best)
        values.append(vals[best])
        A = A + U[best] @ U[best].T
    return chosen, values


def check_bait(n_instances=50, seed=0, rtol=1e-8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        P = int(rng.integers(2, 12))
        A, G = random_spd(rng, P), random_spd(rng, P, 0.1)
        fast = bait_objective(BaitState(A, G))
        dense = dense_trace_objective(A, G)
        worst = max(worst, abs(fast - dense) / abs(dense))
    ok_obj = worst <= rtol

    identity_err = 0.0
    for _ in range(10):
        A = random_spd(rng, int(rng.integers(2, 12)))
        identity_err = max(identity_err, abs(bait_objective(BaitState(A, A.copy())) - A.shape[0]))
    ok_identity = identity_err <= 1e-9

    prior = Prior(1.0)
    greedy_err, same_choice = 0.0, True
    for trial in range(5):
        L_X = rng.normal(size=(4, 2))
        L_y = rng.integers(0, 3, size=4)
        D_X = rng.normal(size=(10, 2))
        point = map_fit(L_X, L_y, 3, prior)
        fast_b, fast_v = bait_greedy(point, L_X, D_X, 6, prior)
        dense_b, dense_v = dense_greedy(point, L_X, D_X, 6, prior)
        same_choice &= fast_b == dense_b
        greedy_err = max(greedy_err, float(np.max(np.abs(np.array(fast_v[1:]) - dense_v) / np.abs(dense_v))))
    ok_greedy = same_choice and greedy_err <= rtol
    lines = [
        f"objective vs dense inverse, {n_instances} SPD instances: max rel err {worst:.2e}",
        f"Tr(A^-1 A) - P: max abs err {identity_err:.2e}",
        f"greedy low-rank vs dense recompute (10-point pool): same picks {same_choice}, "
        f"max rel err {greedy_err:.2e}",
    ]
    return CheckResult("bait", ok_obj and ok_identity and ok_greedy, lines,
                       {"objective_rel": worst, "identity": identity_err, "greedy_rel": greedy_err})


# ---------------------------------------------------------------------------
# BatchBALD


def brute_force_joint_mi(probs):
    """Joint MI by looping over every label configuration explicitly."""
    k, n, c = probs.shape
    joint_h = 0.0
    for config in itertools.product(range(c), repeat=n):
        p = 0.0
        for j in range(k):
            term = 1.0
            for t, y in enumerate(config):
                term *= probs[j, t, y]
            p += term
        p /= k
        if p > 0:
            joint_h -= p * np.log(p)
    cond = 0.0
    for j in range(k):
        for t in range(n):
            for y in range(c):
                q = probs[j, t, y]
                if q > 0:
                    cond -= q * np.log(q) / k
    return joint_h - cond


def check_batchbald(n_instances=20, seed=0, atol=1e-10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        k, n, c = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 4))
        probs = rng.dirichlet(np.ones(c) * 0.7, size=(k, n))
        worst = max(worst, abs(batchbald_joint_mi(probs) - brute_force_joint_mi(probs)))
    reduction = 0.0
    for _ in range(n_instances):
        probs = rng.dirichlet(np.ones(3), size=(int(rng.integers(1, 8)), 1))
        reduction = max(reduction, abs(batchbald_joint_mi(probs) - bald_score(probs, 0)))
    probs = rng.dirichlet(np.ones(2), size=(6, 8))
    batch, gains = batchbald_select(probs, 4)
    monotone = all(b >= a - 1e-9 for a, b in zip(gains, gains[1:]))
    lines = [
        f"joint MI vs brute-force enumeration, {n_instances} tensors: max abs err {worst:.2e}",
        f"|S|=0 reduction to BALD: max abs err {reduction:.2e}",
        f"greedy gains non-decreasing: {monotone}",
    ]
    passed = worst <= atol and reduction <= 1e-12 and monotone
    return CheckResult("batchbald", passed, lines, {"joint": worst, "reduction": reduction})


SUITES = {
    "parbals-mc": check_parbals_mc,
    "bait": check_bait,
    "batchbald": check_batchbald,
}
