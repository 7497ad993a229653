"""Ordinary kriging with an unknown constant mean.

The constant mean carries an improper uniform prior and is integrated out,
which gives the restricted likelihood used as the MCMC target and the usual
ordinary-kriging predictor with its mean-uncertainty inflation term.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .covkernel import KernelParams, cov_matrix, cross_cov_matrix, point_variance
from .hyperprior import LOG2PI, HyperParams

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class ModelEvaluationError(RuntimeError):
    """The covariance could not be factorized, even with jitter."""


def robust_cholesky(K: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * mean(diag)`` and grows by 10 up to
    ``1e-6 * mean(diag)``. Returns the factor and the jitter used.
    """
    if not np.all(np.isfinite(K)):
        raise ModelEvaluationError("covariance matrix has non-finite entries")
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        raise ModelEvaluationError("covariance matrix has a nonpositive mean diagonal")
    jitter = JITTER_START * scale
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise ModelEvaluationError("Cholesky factorization failed after jitter escalation")


@dataclass(frozen=True)
class MfDataset:
    """Observations grouped by fidelity level.

    ``levels`` is sorted in decreasing order (lowest fidelity first);
    ``bounds`` is the input hyper-rectangle, used only for validation.
    """

    x: np.ndarray
    t: np.ndarray
    z: np.ndarray
    levels: Tuple[float, ...]
    bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    level_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        t = np.asarray(self.t, dtype=float).reshape(-1)
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if not (x.shape[0] == t.size == z.size):
            raise ValueError("x, t and z must have the same number of rows")
        if x.shape[0] < 2:
            raise ValueError("need at least two observations")
        levels = tuple(sorted({float(v) for v in self.levels}, reverse=True))
        lev = np.asarray(levels)
        idx = np.array([int(np.argmin(np.abs(lev - ti))) for ti in t], dtype=int)
        if not np.allclose(lev[idx], t, rtol=1e-12, atol=0):
            raise ValueError("every observation must sit on one of the declared levels")
        if not np.all(np.isfinite(z)):
            raise ValueError("observations must be finite")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (x.shape[1], 2):
                raise ValueError("bounds must be one (a, b) pair per input dimension")
            if np.any(x < b[:, 0]) or np.any(x > b[:, 1]):
                raise ValueError("observations lie outside the declared input domain")
            object.__setattr__(self, "bounds", tuple(map(tuple, b.tolist())))
        for name, v in (("x", x), ("t", t), ("z", z)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "level_index", idx)

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def S(self) -> int:
        return len(self.levels)

    @property
    def t_lf(self) -> float:
        return self.levels[0]

    def counts(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.level_index, minlength=self.S))

    def at_level(self, level: float) -> "MfDataset":
        """Single-level sub-dataset."""
        mask = np.isclose(self.t, level, rtol=1e-12, atol=0)
        return MfDataset(self.x[mask], self.t[mask], self.z[mask], (float(level),), self.bounds)


def _noise_vector(theta: HyperParams, data: MfDataset) -> np.ndarray:
    lam = theta.noise_variances()
    if lam.size != data.S:
        raise ValueError(f"hyper-parameters have {lam.size} noise levels, data has {data.S}")
    return lam[data.level_index]


@dataclass(frozen=True)
class GpPosterior:
    data: MfDataset
    theta: HyperParams
    kernel: KernelParams
    chol: np.ndarray
    beta: float
    alpha: np.ndarray      # K^-1 (z - beta 1)
    w: np.ndarray          # L^-1 1
    one_Kinv_one: float
    jitter: float


def _factorize(theta: HyperParams, data: MfDataset):
    if theta.d != data.d:
        raise ValueError(f"hyper-parameters are for d={theta.d}, data has d={data.d}")
    if not theta.is_finite():
        raise ModelEvaluationError("hyper-parameters are not finite on the natural scale")
    try:
        kp = theta.kernel_params(data.t_lf)
    except ValueError as exc:
        raise ModelEvaluationError(str(exc)) from exc
    K = cov_matrix(kp, data.x, data.t, _noise_vector(theta, data))
    L, jitter = robust_cholesky(K)
    w = solve_triangular(L, np.ones(data.n), lower=True)
    v = solve_triangular(L, data.z, lower=True)
    return kp, L, jitter, w, v


def integrated_log_likelihood(theta: HyperParams, data: MfDataset) -> float:
    """Log-density of the observations with the constant mean integrated out.

    ``-1/2 [(n-1) log 2 pi + log|K| + log(1'K^-1 1) + z'Qz]`` with
    ``Q = K^-1 - K^-1 1 (1'K^-1 1)^-1 1'K^-1``.
    """
    _, L, _, w, v = _factorize(theta, data)
    a = float(w @ w)
    if not a > 0:
        raise ModelEvaluationError("1'K^-1 1 is not positive")
    quad = float(v @ v) - float(w @ v) ** 2 / a
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * ((data.n - 1) * LOG2PI + logdet + np.log(a) + quad)


def fit(theta: HyperParams, data: MfDataset) -> GpPosterior:
    kp, L, jitter, w, v = _factorize(theta, data)
    a = float(w @ w)
    if not a > 0:
        raise ModelEvaluationError("1'K^-1 1 is not positive")
    beta = float(w @ v) / a
    alpha = solve_triangular(L.T, v - beta * w, lower=False)
    return GpPosterior(data, theta, kp, L, beta, alpha, w, a, jitter)


def _targets(gp: GpPosterior, x, t):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).copy()
    if x.shape[0] == 0:
        raise ValueError("need at least one target")
    if x.shape[1] != gp.data.d:
        raise ValueError(f"targets must have {gp.data.d} columns")
    if np.any(t > gp.kernel.t_lf) and gp.kernel.multi_fidelity:
        raise ValueError("target fidelity exceeds the lowest observed fidelity")
    return x, t


def predict(gp: GpPosterior, x, t, full_cov: bool = True):
    """Posterior mean and covariance of the latent mean function at targets.

    Returns ``(mean, cov)``; with ``full_cov=False`` the second item is the
    vector of variances.
    """
    x, t = _targets(gp, x, t)
    data = gp.data
    kxu = cross_cov_matrix(gp.kernel, data.x, data.t, x, t)
    V = solve_triangular(gp.chol, kxu, lower=True)
    mean = gp.beta + kxu.T @ gp.alpha
    u = 1.0 - V.T @ gp.w
    if full_cov:
        kuu = cross_cov_matrix(gp.kernel, x, t, x, t)
        cov = kuu - V.T @ V + np.outer(u, u) / gp.one_Kinv_one
        cov = 0.5 * (cov + cov.T)
        return mean, cov
    var = point_variance(gp.kernel, t) - np.sum(V * V, axis=0) + u * u / gp.one_Kinv_one
    return mean, var


def sample_paths(gp: GpPosterior, x, t, q: int, rng: np.random.Generator) -> np.ndarray:
    """``q`` joint draws of the latent mean function at the targets (q x m)."""
    if q < 1:
        raise ValueError("q must be >= 1")
    mean, cov = predict(gp, x, t)
    eps = rng.standard_normal((q, mean.size))
    if not np.any(np.diag(cov) > 0):
        # degenerate posterior: every path is the mean
        return np.tile(mean, (q, 1))
    try:
        L, _ = robust_cholesky(cov)
    except ModelEvaluationError:
        # rank-deficient up to round-off (e.g. targets at noise-free data):
        # symmetric square root with negative eigenvalues clipped
        w, U = np.linalg.eigh(cov)
        L = U * np.sqrt(np.clip(w, 0.0, None))
    return mean + eps @ L.T
