"""Adaptive Metropolis sampling and MAP search over the log-parameters.

The sampler is the Gaussian random-walk Metropolis algorithm whose proposal
covariance, after ``adaptation_start`` steps, becomes
``s_d * (empirical covariance of the chain so far + eps * I)``.
"""
import csv
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .hyperprior import HyperParams, PriorSpec, log_prior_density, sample_prior
from .mfgp import MfDataset, ModelEvaluationError, integrated_log_likelihood

logger = logging.getLogger(__name__)

MAX_INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class AmhConfig:
    n_iterations: int = 20000
    burn_in: int = 5000
    thin: int = 15
    adaptation_start: int = 1000
    scale: Optional[float] = None          # defaults to 2.4**2 / D
    eps: float = 1e-6
    initial_cov_factor: float = 0.01       # initial proposal = factor * prior cov
    initial_cov: Optional[np.ndarray] = None
    adapt: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1 or self.burn_in < 0:
            raise ValueError("n_iterations must be >= 1 and burn_in >= 0")
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.adaptation_start < 1:
            raise ValueError("adaptation_start must be >= 1")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def for_samples(cls, p: int, burn_in: int = 5000, thin: int = 15, **kw) -> "AmhConfig":
        """Config whose retained sample has exactly ``p`` draws."""
        return cls(n_iterations=burn_in + p * thin, burn_in=burn_in, thin=thin, **kw)

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.n_iterations, self.thin))


@dataclass
class ChainResult:
    samples: np.ndarray        # retained states, (p, D)
    log_target: np.ndarray     # log target at retained states
    acceptance_rate: float
    trace: np.ndarray          # full chain, (n_iterations, D)
    trace_log_target: np.ndarray
    proposal_cov: np.ndarray


@dataclass
class PosteriorSample:
    thetas: List[HyperParams]
    acceptance_rate: float
    log_posterior: np.ndarray
    trace: np.ndarray
    trace_log_posterior: np.ndarray

    def __post_init__(self):
        if len(self.thetas) < 1:
            raise ValueError("posterior sample is empty")

    @property
    def log_thetas(self) -> np.ndarray:
        return np.array([h.log_theta for h in self.thetas])


def _safe(log_target: Callable[[np.ndarray], float], x: np.ndarray) -> float:
    try:
        v = float(log_target(x))
    except (ModelEvaluationError, FloatingPointError, ValueError, np.linalg.LinAlgError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def adaptive_metropolis(log_target: Callable[[np.ndarray], float], x0, cfg: AmhConfig,
                        rng: Optional[np.random.Generator] = None) -> ChainResult:
    """Run one adaptive Metropolis chain on an arbitrary log-density.

    States whose log-target is non-finite (or raises a model error) are
    rejected. The empirical covariance is updated recursively (Welford), so a
    step costs O(D^2) plus one Cholesky of the D x D proposal.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x = np.array(x0, dtype=float).reshape(-1)
    D = x.size
    sd = cfg.scale if cfg.scale is not None else 2.4 ** 2 / D
    if cfg.initial_cov is not None:
        c0 = np.array(cfg.initial_cov, dtype=float)
    else:
        c0 = cfg.initial_cov_factor * np.eye(D)
    if c0.shape != (D, D):
        raise ValueError("initial proposal covariance has the wrong shape")
    chol0 = np.linalg.cholesky(c0)
    eye = np.eye(D)

    fx = _safe(log_target, x)
    if not np.isfinite(fx):
        raise ModelEvaluationError("log-target is not finite at the initial state")

    n = cfg.n_iterations
    trace = np.empty((n, D))
    trace_lt = np.empty(n)
    mean = x.copy()
    m2 = np.zeros((D, D))
    count = 1
    chol = chol0
    accepted = 0
    for it in range(n):
        if cfg.adapt and it >= cfg.adaptation_start:
            cov = sd * (m2 / (count - 1) + cfg.eps * eye)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                chol = np.linalg.cholesky(0.5 * (cov + cov.T) + sd * cfg.eps * 10 * eye)
        y = x + chol @ rng.standard_normal(D)
        fy = _safe(log_target, y)
        if np.log(rng.uniform()) < fy - fx:
            x, fx = y, fy
            accepted += 1
        trace[it] = x
        trace_lt[it] = fx
        # Welford update with the new state
        count += 1
        delta = x - mean
        mean = mean + delta / count
        m2 += np.outer(delta, x - mean)
    final_cov = sd * (m2 / (count - 1) + cfg.eps * eye) if cfg.adapt else chol0 @ chol0.T
    keep = slice(cfg.burn_in, n, cfg.thin)
    return ChainResult(trace[keep].copy(), trace_lt[keep].copy(), accepted / n,
                       trace, trace_lt, 0.5 * (final_cov + final_cov.T))


def log_posterior(prior: PriorSpec, data: MfDataset) -> Callable[[np.ndarray], float]:
    """``integrated_log_likelihood + log_prior_density`` as a function of log-theta."""
    def f(v: np.ndarray) -> float:
        h = prior.point(v)
        return integrated_log_likelihood(h, data) + log_prior_density(prior, h)
    return f


def _initial_point(target, prior: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    x0 = prior.mean.copy()
    if np.isfinite(_safe(target, x0)):
        return x0
    for _ in range(MAX_INIT_ATTEMPTS):
        x0 = sample_prior(prior, 1, rng)[0].log_theta
        if np.isfinite(_safe(target, x0)):
            return np.array(x0)
    raise ModelEvaluationError(
        f"no valid initial point after {MAX_INIT_ATTEMPTS} prior draws")


def run_amh(data: MfDataset, prior: PriorSpec, cfg: AmhConfig) -> PosteriorSample:
    """Sample the hyper-parameter posterior given the data."""
    rng = np.random.default_rng(cfg.seed)
    target = log_posterior(prior, data)
    x0 = _initial_point(target, prior, rng)
    if cfg.initial_cov is None:
        cfg_run = AmhConfig(**{**cfg.__dict__, "initial_cov": cfg.initial_cov_factor * prior.cov})
    else:
        cfg_run = cfg
    res = adaptive_metropolis(target, x0, cfg_run, rng)
    if not 0.1 <= res.acceptance_rate <= 0.5:
        logger.warning("adaptive Metropolis acceptance rate %.3f outside [0.1, 0.5]",
                       res.acceptance_rate)
    thetas = [prior.point(v) for v in res.samples]
    return PosteriorSample(thetas, res.acceptance_rate, res.log_target, res.trace, res.trace_log_target)


def write_trace_csv(path, sample: PosteriorSample) -> None:
    names = sample.thetas[0].names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "log_posterior", *names])
        for i, (lp, row) in enumerate(zip(sample.trace_log_posterior, sample.trace)):
            w.writerow([i, repr(float(lp)), *(repr(float(v)) for v in row)])


# --- MAP ------------------------------------------------------------------

def pattern_search(f: Callable[[np.ndarray], float], x0, step0, shrink: float = 0.5,
                   tol: float = 1e-4, max_evals: int = 200000):
    """Maximize ``f`` by coordinate-wise compass search with shrinking steps.

    Each coordinate keeps its own step; a full sweep without improvement
    halves every step. Stops once all steps are below ``tol``.
    Returns ``(x, f(x), n_evals)``.
    """
    x = np.array(x0, dtype=float)
    fx = _safe(f, x)
    step = np.broadcast_to(np.asarray(step0, dtype=float), x.shape).copy()
    evals = 1
    while np.any(step >= tol) and evals < max_evals:
        improved = False
        for k in range(x.size):
            for sign in (1.0, -1.0):
                y = x.copy()
                y[k] += sign * step[k]
                fy = _safe(f, y)
                evals += 1
                if fy > fx:
                    x, fx = y, fy
                    improved = True
                    # keep moving the same way while it pays
                    while evals < max_evals:
                        y = x.copy()
                        y[k] += sign * step[k]
                        fy = _safe(f, y)
                        evals += 1
                        if fy > fx:
                            x, fx = y, fy
                        else:
                            break
                    break
        if not improved:
            step *= shrink
    return x, fx, evals


def maximize(f: Callable[[np.ndarray], float], starts, step0, tol: float = 1e-4):
    """Best pattern-search result over several starting points."""
    best_x, best_f = None, -np.inf
    for x0 in starts:
        if not np.isfinite(_safe(f, x0)):
            continue
        x, fx, _ = pattern_search(f, x0, step0, tol=tol)
        if fx > best_f:
            best_x, best_f = x, fx
    if best_x is None:
        raise ModelEvaluationError("log-posterior could not be evaluated at any starting point")
    return best_x, best_f


def map_estimate(data: MfDataset, prior: PriorSpec, restarts: int = 10,
                 rng: Optional[np.random.Generator] = None) -> HyperParams:
    """Maximum a posteriori log-parameters.

    Pattern search from the prior mean and from ``restarts`` prior draws;
    the initial step per coordinate is half a prior standard deviation.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    starts = [prior.mean] + [h.log_theta for h in sample_prior(prior, restarts, rng)]
    x, _ = maximize(log_posterior(prior, data), starts, 0.5 * prior.sd)
    return prior.point(x)
