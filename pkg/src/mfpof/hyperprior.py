"""Log-scale Gaussian prior over the hyper-parameters.

Layout of the multi-fidelity log-parameter vector (length ``2d + 3 + S``)::

    [log sigma0_sq, log rho0_1..d, log g_ratio, log rho_eps_1..d, log degree_L,
     log lambda_1..S]

where ``lambda_s`` is the noise variance at the s-th level, levels ordered
from lowest fidelity (largest t) to highest fidelity (smallest t).

Single-level models keep only ``[log sigma0_sq, log rho0_1..d, log lambda]``
(length ``d + 2``).
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covkernel import KernelParams

LOG2PI = np.log(2.0 * np.pi)
NOISE_CORRELATION = 0.99


def param_names(d: int, S: int, multi_fidelity: bool = True) -> List[str]:
    names = ["log_sigma0_sq"] + [f"log_rho0_{k + 1}" for k in range(d)]
    if multi_fidelity:
        names += ["log_g"] + [f"log_rho_eps_{k + 1}" for k in range(d)] + ["log_L"]
        names += [f"log_lambda_{s + 1}" for s in range(S)]
    else:
        names += ["log_lambda_1"]
    return names


def n_params(d: int, S: int, multi_fidelity: bool = True) -> int:
    return 2 * d + 3 + S if multi_fidelity else d + 2


@dataclass(frozen=True)
class HyperParams:
    """A point in log-parameter space plus its layout metadata."""

    log_theta: np.ndarray
    d: int
    S: int
    multi_fidelity: bool = True

    def __post_init__(self):
        v = np.array(self.log_theta, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "log_theta", v)
        S = self.S if self.multi_fidelity else 1
        object.__setattr__(self, "S", S)
        expected = n_params(self.d, S, self.multi_fidelity)
        if v.shape[0] != expected:
            raise ValueError(f"expected {expected} log-parameters, got {v.shape[0]}")

    @property
    def theta(self) -> np.ndarray:
        """Natural-scale view."""
        return np.exp(self.log_theta)

    @property
    def D(self) -> int:
        return self.log_theta.shape[0]

    @property
    def names(self) -> List[str]:
        return param_names(self.d, self.S, self.multi_fidelity)

    def is_finite(self) -> bool:
        with np.errstate(over="ignore", under="ignore"):
            th = self.theta
        return bool(np.all(np.isfinite(th)) and np.all(th > 0))

    def noise_variances(self) -> np.ndarray:
        """Per-level noise variances, lowest fidelity first."""
        return np.exp(self.log_theta[-self.S:])

    def kernel_params(self, t_lf: float) -> KernelParams:
        th = self.theta
        d = self.d
        if self.multi_fidelity:
            return KernelParams(
                sigma0_sq=th[0], rho0=th[1:1 + d], g_ratio=th[1 + d],
                rho_eps=th[2 + d:2 + 2 * d], degree_L=th[2 + 2 * d], t_lf=t_lf,
            )
        return KernelParams(sigma0_sq=th[0], rho0=th[1:1 + d], g_ratio=1.0,
                            rho_eps=None, degree_L=1.0, t_lf=t_lf)

    def with_log_theta(self, log_theta) -> "HyperParams":
        return HyperParams(log_theta, self.d, self.S, self.multi_fidelity)


@dataclass(frozen=True)
class PriorSpec:
    """Multivariate normal prior ``N(mean, cov)`` on the log-parameters."""

    mean: np.ndarray
    cov: np.ndarray
    noise_correlation: float
    r_out: float
    bounds: Tuple[Tuple[float, float], ...]
    S: int
    multi_fidelity: bool = True
    _chol: tuple = field(init=False, repr=False, compare=False)
    _logdet: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("prior covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("prior covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "bounds", tuple((float(a), float(b)) for a, b in self.bounds))
        try:
            chol = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("prior covariance is not positive definite") from exc
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol[0])))))

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def D(self) -> int:
        return self.mean.size

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def point(self, log_theta) -> HyperParams:
        return HyperParams(log_theta, self.d, self.S, self.multi_fidelity)

    def mode(self) -> HyperParams:
        return self.point(self.mean)

    def to_dict(self) -> dict:
        return {
            "r_out": self.r_out,
            "noise_correlation": self.noise_correlation,
            "bounds": [list(b) for b in self.bounds],
            "S": self.S,
            "multi_fidelity": self.multi_fidelity,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PriorSpec":
        return cls(mean=np.asarray(obj["mean"]), cov=np.asarray(obj["cov"]),
                   noise_correlation=float(obj["noise_correlation"]), r_out=float(obj["r_out"]),
                   bounds=tuple(tuple(b) for b in obj["bounds"]), S=int(obj["S"]),
                   multi_fidelity=bool(obj["multi_fidelity"]))


def default_prior(d: int, S: int, r_out: float, bounds: Sequence[Tuple[float, float]],
                  noise_correlation: float = NOISE_CORRELATION,
                  multi_fidelity: bool = True) -> PriorSpec:
    """Weakly-informative prior centred on reference values.

    Variances and noise variances are centred on ``(r_out / 100)**2`` with a
    log-sd of ``log 100``; ranges on half the domain width with log-sd
    ``log 10``; the fidelity exponent on 4 with log-sd ``log 3``. The
    log-noise variances of the S levels share pairwise correlation
    ``noise_correlation``.
    """
    bounds = [tuple(map(float, b)) for b in bounds]
    if d < 1 or len(bounds) != d:
        raise ValueError("need one (a, b) bound per input dimension")
    if S < 1:
        raise ValueError("need at least one fidelity level")
    if not r_out > 0:
        raise ValueError("r_out must be positive")
    if any(not a < b for a, b in bounds):
        raise ValueError(f"invalid bounds {bounds}: need a < b")
    if not 0.0 <= noise_correlation < 1.0:
        raise ValueError("noise correlation must lie in [0, 1)")

    log_scale = np.log(r_out ** 2 / 100.0 ** 2)
    log_ranges = [np.log((b - a) / 2.0) for a, b in bounds]
    var_big = np.log(100.0) ** 2
    var_range = np.log(10.0) ** 2
    if not multi_fidelity:
        S = 1
        mean = np.array([log_scale, *log_ranges, log_scale])
        var = np.array([var_big] + [var_range] * d + [var_big])
        return PriorSpec(mean, np.diag(var), noise_correlation, r_out, tuple(bounds), 1, False)

    mean = np.array([log_scale, *log_ranges, 0.0, *log_ranges, np.log(4.0)] + [log_scale] * S)
    D = mean.size
    cov = np.zeros((D, D))
    kvar = [var_big] + [var_range] * d + [var_big] + [var_range] * d + [np.log(3.0) ** 2]
    cov[np.arange(len(kvar)), np.arange(len(kvar))] = kvar
    c = noise_correlation
    cov[D - S:, D - S:] = var_big * ((1.0 - c) * np.eye(S) + c * np.ones((S, S)))
    return PriorSpec(mean, cov, noise_correlation, r_out, tuple(bounds), S, True)


def log_prior_density(prior: PriorSpec, h) -> float:
    """Normalized multivariate normal log-density of the log-parameters."""
    v = h.log_theta if isinstance(h, HyperParams) else np.asarray(h, dtype=float)
    if v.shape != prior.mean.shape:
        raise ValueError(f"expected {prior.D} log-parameters, got {v.shape}")
    r = v - prior.mean
    quad = float(r @ cho_solve(prior._chol, r))
    return -0.5 * (prior.D * LOG2PI + prior._logdet + quad)


def sample_prior(prior: PriorSpec, n: int, rng: np.random.Generator) -> List[HyperParams]:
    if n < 1:
        raise ValueError("n must be >= 1")
    L = np.tril(prior._chol[0])
    draws = prior.mean + rng.standard_normal((n, prior.D)) @ L.T
    return [prior.point(row) for row in draws]
