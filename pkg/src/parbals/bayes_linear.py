"""Multiclass Bayesian logistic regression with a Laplace posterior.

Parameters are kept as a ``(c, d + 1)`` array ``theta = [W | b]``; the flat
parameter vector used for Hessians and covariances is ``theta.ravel()``,
i.e. class-major with each class's bias as its last entry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import rng as _rng

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MAX_ITER = 500
DEFAULT_K = 400
JITTER_START = 1e-8
JITTER_MAX = 1e-4


class ConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm=float("nan"), universe=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.universe = universe


@dataclass(frozen=True)
class Prior:
    """Isotropic Gaussian prior ``N(0, variance * I)`` over all parameters."""

    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"prior variance must be positive, got {self.variance}")

    @property
    def precision(self):
        return 1.0 / self.variance


@dataclass(frozen=True)
class WeightPoint:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).ravel()
        if b.shape[0] != W.shape[0]:
            raise ValueError("W and b disagree on the class count")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("weight point has non-finite entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_theta(cls, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:, :-1].copy(), theta[:, -1].copy())

    @classmethod
    def zeros(cls, num_classes, dim):
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    @property
    def theta(self):
        return np.hstack([self.W, self.b[:, None]])

    @property
    def num_classes(self):
        return self.W.shape[0]

    @property
    def dim(self):
        return self.W.shape[1]


def augment(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return np.hstack([X, np.ones((X.shape[0], 1))])


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def objective(theta, X, y, prior):
    """Negative log posterior up to a constant: NLL + ``|theta|^2 / (2 var)``."""
    theta = np.asarray(theta, dtype=np.float64)
    reg = 0.5 * prior.precision * float(np.sum(theta * theta))
    if len(y) == 0:
        return reg
    logp = _log_softmax(augment(X) @ theta.T)
    return -float(logp[np.arange(len(y)), y].sum()) + reg


def gradient(theta, X, y, prior):
    theta = np.asarray(theta, dtype=np.float64)
    g = prior.precision * theta
    if len(y) == 0:
        return g
    Xa = augment(X)
    resid = softmax(Xa @ theta.T)
    resid[np.arange(len(y)), y] -= 1.0
    return g + resid.T @ Xa


def fisher_factors(probs):
    """``diag(p) - p p^T`` for each row of ``probs``; shape ``(n, c, c)``."""
    probs = np.asarray(probs, dtype=np.float64)
    M = -probs[:, :, None] * probs[:, None, :]
    idx = np.arange(probs.shape[1])
    M[:, idx, idx] += probs
    return M


def data_hessian(Xa, probs):
    """``sum_n (diag p_n - p_n p_n^T) kron xa_n xa_n^T`` as a ``(P, P)`` matrix."""
    n, D = Xa.shape
    c = probs.shape[1]
    if n == 0:
        return np.zeros((c * D, c * D))
    M = fisher_factors(probs)
    H = np.einsum("nab,ni,nj->aibj", M, Xa, Xa, optimize=True)
    H = H.reshape(c * D, c * D)
    return 0.5 * (H + H.T)


def hessian(X, point, prior=None, include_prior=True):
    """Hessian (= Fisher) of the multinomial NLL at ``point``; label-free.

    ``point`` is a :class:`WeightPoint` or a ``(c, d + 1)`` theta array.
    """
    theta = point.theta if isinstance(point, WeightPoint) else np.asarray(point, dtype=np.float64)
    c, D = theta.shape
    X = np.asarray(X, dtype=np.float64).reshape(-1, D - 1)
    Xa = augment(X) if len(X) else np.zeros((0, D))
    H = data_hessian(Xa, softmax(Xa @ theta.T)) if len(X) else np.zeros((c * D, c * D))
    if include_prior:
        if prior is None:
            raise ValueError("include_prior requires a prior")
        H = H + prior.precision * np.eye(c * D)
    return H


def _cholesky_jittered(A, what):
    """Lower Cholesky factor, adding ``eps * I`` (1e-8 .. 1e-4) on failure."""
    try:
        return linalg.cholesky(A, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    eps = JITTER_START
    eye = np.eye(A.shape[0])
    while eps <= JITTER_MAX * (1 + 1e-12):
        try:
            L = linalg.cholesky(A + eps * eye, lower=True)
        except linalg.LinAlgError:
            eps *= 10.0
            continue
        logger.warning("%s not positive definite; added jitter %.0e", what, eps)
        return L, eps
    raise linalg.LinAlgError(f"{what} is singular even with jitter {JITTER_MAX:g}")


def newton_map(X, y, num_classes, prior, tol=DEFAULT_TOL, init=None, max_iter=MAX_ITER):
    """Damped Newton descent on the MAP objective.

    Returns ``(theta, iterations, grad_norm)``.  Raises :class:`ConvergenceError`
    if the gradient norm is still above ``tol`` after ``max_iter`` steps.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    D = X.shape[1] + 1 if X.ndim == 2 else (np.asarray(init).shape[1] if init is not None else 1)
    if len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    theta = np.zeros((num_classes, D)) if init is None else np.array(init, dtype=np.float64)
    if len(y) == 0:
        return np.zeros_like(theta), 0, 0.0
    Xa = augment(X)
    rows = np.arange(len(y))

    def obj_grad(th):
        logits = Xa @ th.T
        logp = _log_softmax(logits)
        f = -logp[rows, y].sum() + 0.5 * prior.precision * np.sum(th * th)
        p = np.exp(logp)
        resid = p.copy()
        resid[rows, y] -= 1.0
        return f, resid.T @ Xa + prior.precision * th, p

    f, g, p = obj_grad(theta)
    gnorm = float(np.linalg.norm(g))
    for it in range(max_iter):
        if gnorm <= tol:
            return theta, it, gnorm
        H = data_hessian(Xa, p) + prior.precision * np.eye(theta.size)
        step = linalg.cho_solve(linalg.cho_factor(H, lower=True), g.ravel()).reshape(theta.shape)
        slope = float(np.sum(g * step))
        t = 1.0
        # predicted decrease below the objective's rounding: Armijo cannot
        # discriminate, and the iterate is inside the quadratic basin
        accepted = slope <= 1e-12 * (1.0 + abs(f))
        if accepted:
            cand = theta - step
            f_new, g_new, p_new = obj_grad(cand)
        for _ in range(0 if accepted else 40):
            cand = theta - t * step
            f_new, g_new, p_new = obj_grad(cand)
            if f_new <= f - 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # objective is flat to rounding; take the full step if it helps the gradient
            cand = theta - step
            f_new, g_new, p_new = obj_grad(cand)
            if np.linalg.norm(g_new) >= gnorm:
                raise ConvergenceError(
                    f"line search stalled with gradient norm {gnorm:.3e}", grad_norm=gnorm
                )
        theta, f, g, p = cand, f_new, g_new, p_new
        gnorm = float(np.linalg.norm(g))
    if gnorm <= tol:
        return theta, max_iter, gnorm
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (gradient norm {gnorm:.3e})", grad_norm=gnorm
    )


def map_fit(X, y, num_classes, prior, tol=DEFAULT_TOL, init=None):
    """MAP weights of the regularized multinomial logistic model."""
    X = np.asarray(X, dtype=np.float64)
    theta, _, _ = newton_map(X, y, num_classes, prior, tol=tol, init=init)
    return WeightPoint.from_theta(theta)


def _seed_path(seed):
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def draw_samples(map_point, covariance, k, seed):
    """``k`` Gaussian draws around ``map_point``; shape ``(k, c, d + 1)``."""
    mean = map_point.theta
    L, _ = _cholesky_jittered(covariance, "posterior covariance")
    path = _seed_path(seed)
    z = _rng.generator(path[0], *path[1:], _rng.POSTERIOR).standard_normal((k, mean.size))
    return mean[None] + (z @ L.T).reshape((k,) + mean.shape)


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Laplace posterior: MAP, covariance over ``theta.ravel()``, ``k`` samples."""

    map: WeightPoint
    covariance: np.ndarray
    samples: np.ndarray
    seed: tuple
    iterations: int = field(default=0, compare=False)

    @property
    def k(self):
        return self.samples.shape[0]

    @property
    def num_classes(self):
        return self.map.num_classes

    @property
    def dim(self):
        return self.map.dim

    def weight_points(self):
        return [WeightPoint.from_theta(t) for t in self.samples]

    def to_json(self):
        """JSON text holding map, covariance, seed and k; samples are redrawn on load."""
        payload = {
            "format": "parbals-ensemble/1",
            "num_classes": self.num_classes,
            "dim": self.dim,
            "k": self.k,
            "seed": list(self.seed),
            "map_W": self.map.W.tolist(),
            "map_b": self.map.b.tolist(),
            "covariance": self.covariance.tolist(),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format") != "parbals-ensemble/1":
            raise ValueError(f"unsupported ensemble format {d.get('format')!r}")
        point = WeightPoint(np.array(d["map_W"]), np.array(d["map_b"]))
        cov = np.array(d["covariance"], dtype=np.float64)
        seed = tuple(d["seed"])
        return cls(point, cov, draw_samples(point, cov, int(d["k"]), seed), seed)


def laplace_posterior(X, y, num_classes, prior, k=DEFAULT_K, seed=0, tol=DEFAULT_TOL, init=None):
    """Gaussian approximation at the MAP with the inverse Hessian as covariance."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    theta, iters, _ = newton_map(X, y, num_classes, prior, tol=tol, init=init)
    point = WeightPoint.from_theta(theta)
    H = hessian(X, point, prior, include_prior=True)
    L, _ = _cholesky_jittered(H, "posterior Hessian")
    cov = linalg.cho_solve((L, True), np.eye(H.shape[0]))
    cov = 0.5 * (cov + cov.T)
    seed = _seed_path(seed)
    return PosteriorEnsemble(point, cov, draw_samples(point, cov, k, seed), seed, iters)


def refit_with(X, y, extra_x, extra_y, num_classes, prior, k=DEFAULT_K, seed=0,
               tol=DEFAULT_TOL, warm=None):
    """Posterior on ``L + {(extra_x, extra_y)}``, warm-started from ``warm`` if given."""
    X = np.asarray(X, dtype=np.float64)
    Xn = np.vstack([X.reshape(-1, np.asarray(extra_x).size), np.asarray(extra_x, dtype=np.float64)[None]])
    yn = np.append(np.asarray(y, dtype=np.int64), int(extra_y))
    init = warm.map.theta if warm is not None else None
    return laplace_posterior(Xn, yn, num_classes, prior, k=k, seed=seed, tol=tol, init=init)


@dataclass(frozen=True)
class PredictiveTensor:
    """Per-sample class probabilities, shape ``(k, n, c)``."""

    probs: np.ndarray
    point_ids: np.ndarray

    @property
    def bma(self):
        return self.probs.mean(axis=0)

    @property
    def k(self):
        return self.probs.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PredictiveTensor(self.probs[:, idx], self.point_ids[idx])


def sample_probs(samples, X):
    """``softmax(W_j x_i + b_j)`` for every sample ``j`` and row ``i``."""
    Xa = augment(X)
    logits = np.einsum("nd,kcd->knc", Xa, samples, optimize=True)
    return softmax(logits)


def predict(ensemble, X, point_ids=None):
    """Per-sample predictive tensor and the model-averaged ``(n, c)`` matrix."""
    X = np.asarray(X, dtype=np.float64)
    probs = sample_probs(ensemble.samples, X)
    ids = np.arange(X.shape[0]) if point_ids is None else np.asarray(point_ids)
    return PredictiveTensor(probs, ids), probs.mean(axis=0)


def map_probs(point, X):
    theta = point.theta if isinstance(point, WeightPoint) else point
    return softmax(augment(X) @ theta.T)
