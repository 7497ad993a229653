"""Multi-fidelity covariance: anisotropic Matérn 5/2 plus a fidelity-scaled
error term.

The covariance between ``(x, t)`` and ``(x', t')`` is

    c0(x - x') + r(t, t') * c_eps(x - x')

with ``c0(h) = sigma0_sq * M52(|h / rho0|)``,
``c_eps(h) = sigma0_sq * g_ratio * M52(|h / rho_eps|)`` and the distorted
Brownian fidelity correlation ``r(t, t') = (min(t, t') / t_lf) ** degree_L``.

All parameters are on the natural scale here; the log reparameterization
lives in :mod:`mfpof.hyperprior`.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._accel import HAVE_NUMBA, njit

SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelParams:
    """Natural-scale kernel parameters.

    ``rho_eps`` is ``None`` for single-level models, which carry no error
    process; ``g_ratio`` and ``degree_L`` are then ignored.
    """

    sigma0_sq: float
    rho0: np.ndarray
    g_ratio: float
    rho_eps: Optional[np.ndarray]
    degree_L: float
    t_lf: float

    def __post_init__(self):
        rho0 = np.atleast_1d(np.asarray(self.rho0, dtype=float))
        object.__setattr__(self, "rho0", rho0)
        if self.rho_eps is not None:
            rho_eps = np.atleast_1d(np.asarray(self.rho_eps, dtype=float))
            if rho_eps.shape != rho0.shape:
                raise ValueError("rho0 and rho_eps must have the same length")
            object.__setattr__(self, "rho_eps", rho_eps)
            scalars = (self.sigma0_sq, self.g_ratio, self.degree_L, self.t_lf)
            ranges = np.concatenate([rho0, rho_eps])
        else:
            scalars = (self.sigma0_sq, self.t_lf)
            ranges = rho0
        if not (np.all(np.isfinite(scalars)) and np.all(np.isfinite(ranges))):
            raise ValueError("kernel parameters must be finite")
        if min(scalars) <= 0 or np.any(ranges <= 0):
            raise ValueError("kernel parameters must be strictly positive")

    @property
    def d(self) -> int:
        return self.rho0.shape[0]

    @property
    def multi_fidelity(self) -> bool:
        return self.rho_eps is not None


def matern52(h):
    """Matérn 5/2 correlation ``(1 + sqrt(5) h + 5/3 h^2) exp(-sqrt(5) h)``.

    Accepts scalars or arrays; negative lags raise ``ValueError``.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("matern52 is defined for nonnegative lags only")
    out = (1.0 + SQRT5 * h + (5.0 / 3.0) * h * h) * np.exp(-SQRT5 * h)
    return out if out.ndim else float(out)


def scaled_distance(x, x2, rho) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if not (x.shape == x2.shape == rho.shape):
        raise ValueError(f"dimension mismatch: {x.shape}, {x2.shape}, {rho.shape}")
    if np.any(rho <= 0):
        raise ValueError("ranges must be strictly positive")
    return float(np.sqrt(np.sum(((x - x2) / rho) ** 2)))


def fidelity_cov(t: float, t2: float, degree_L: float, t_lf: float) -> float:
    if t < 0 or t2 < 0:
        raise ValueError("fidelity values must be nonnegative")
    if t > t_lf or t2 > t_lf:
        raise ValueError(f"fidelity values must not exceed t_lf={t_lf}")
    return (min(t, t2) / t_lf) ** degree_L


def mf_cov(p: KernelParams, x, t: float, x2, t2: float) -> float:
    c = p.sigma0_sq * matern52(scaled_distance(x, x2, p.rho0))
    if p.multi_fidelity:
        r = fidelity_cov(t, t2, p.degree_L, p.t_lf)
        c += r * p.sigma0_sq * p.g_ratio * matern52(scaled_distance(x, x2, p.rho_eps))
    return c


# --- Gram-matrix kernels --------------------------------------------------

# Both kernels take the fidelity factor per point, tl = (t / t_lf) ** L, and
# use min(t, t')**L = min(t**L, t'**L) to avoid a pow per pair.

def _cross_cov_numpy(x1, tl1, x2, tl2, sigma0_sq, inv_rho0, g_ratio, inv_rho_eps, mf):
    diff = x1[:, None, :] - x2[None, :, :]
    h0 = np.sqrt(np.sum((diff * inv_rho0) ** 2, axis=-1))
    out = sigma0_sq * (1.0 + SQRT5 * h0 + (5.0 / 3.0) * h0 * h0) * np.exp(-SQRT5 * h0)
    if mf:
        he = np.sqrt(np.sum((diff * inv_rho_eps) ** 2, axis=-1))
        r = np.minimum(tl1[:, None], tl2[None, :])
        out += r * (sigma0_sq * g_ratio) * (1.0 + SQRT5 * he + (5.0 / 3.0) * he * he) * np.exp(-SQRT5 * he)
    return out


def _cross_cov_loops(x1, tl1, x2, tl2, sigma0_sq, inv_rho0, g_ratio, inv_rho_eps, mf):
    n1, d = x1.shape
    n2 = x2.shape[0]
    out = np.empty((n1, n2))
    s5 = np.sqrt(5.0)
    ge = sigma0_sq * g_ratio
    for i in range(n1):
        for j in range(n2):
            a = 0.0
            b = 0.0
            for k in range(d):
                diff = x1[i, k] - x2[j, k]
                u = diff * inv_rho0[k]
                a += u * u
                w = diff * inv_rho_eps[k]
                b += w * w
            h0 = np.sqrt(a)
            c = sigma0_sq * (1.0 + s5 * h0 + (5.0 / 3.0) * h0 * h0) * np.exp(-s5 * h0)
            if mf:
                he = np.sqrt(b)
                r = min(tl1[i], tl2[j])
                c += r * ge * (1.0 + s5 * he + (5.0 / 3.0) * he * he) * np.exp(-s5 * he)
            out[i, j] = c
    return out


cross_cov_numpy = _cross_cov_numpy
if HAVE_NUMBA:
    cross_cov_numba = njit(cache=True)(_cross_cov_loops)
    _cross_cov = cross_cov_numba
else:
    cross_cov_numba = None
    _cross_cov = _cross_cov_numpy


def cross_cov_matrix(p: KernelParams, x1, t1, x2, t2) -> np.ndarray:
    """Covariance block between point sets ``(x1, t1)`` and ``(x2, t2)``."""
    x1 = np.ascontiguousarray(np.atleast_2d(x1), dtype=float)
    x2 = np.ascontiguousarray(np.atleast_2d(x2), dtype=float)
    t1 = np.ascontiguousarray(t1, dtype=float).reshape(-1)
    t2 = np.ascontiguousarray(t2, dtype=float).reshape(-1)
    if x1.shape[1] != p.d or x2.shape[1] != p.d:
        raise ValueError(f"inputs must have {p.d} columns")
    if x1.shape[0] != t1.shape[0] or x2.shape[0] != t2.shape[0]:
        raise ValueError("inputs and fidelity vectors have different lengths")
    mf = p.multi_fidelity
    if mf and (np.any(t1 > p.t_lf) or np.any(t2 > p.t_lf) or np.any(t1 < 0) or np.any(t2 < 0)):
        raise ValueError(f"fidelity values must lie in [0, t_lf={p.t_lf}]")
    inv_rho0 = 1.0 / p.rho0
    inv_rho_eps = 1.0 / p.rho_eps if mf else inv_rho0
    tl1 = (t1 / p.t_lf) ** p.degree_L if mf else t1
    tl2 = (t2 / p.t_lf) ** p.degree_L if mf else t2
    return _cross_cov(x1, tl1, x2, tl2, float(p.sigma0_sq), inv_rho0, float(p.g_ratio),
                      inv_rho_eps, mf)


def cov_matrix(p: KernelParams, x, t, noise=None) -> np.ndarray:
    """Gram matrix at ``(x, t)`` with per-point ``noise`` on the diagonal."""
    K = cross_cov_matrix(p, x, t, x, t)
    # exact symmetry, whatever the kernel rounding did
    K = 0.5 * (K + K.T)
    if noise is not None:
        noise = np.asarray(noise, dtype=float).reshape(-1)
        if noise.shape[0] != K.shape[0]:
            raise ValueError("noise length must equal the number of points")
        K[np.diag_indices_from(K)] += noise
    return K


def point_variance(p: KernelParams, t) -> np.ndarray:
    """Prior variance ``k((x, t), (x, t))``; independent of x."""
    t = np.asarray(t, dtype=float)
    if not p.multi_fidelity:
        return np.full(t.shape, p.sigma0_sq)
    return p.sigma0_sq * (1.0 + p.g_ratio * (t / p.t_lf) ** p.degree_L)
