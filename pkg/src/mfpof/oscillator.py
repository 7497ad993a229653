"""Random damped harmonic oscillator, the multi-fidelity test simulator.

    X'' + 2 zeta omega0 X' + omega0^2 X = white noise,   X(0) = X'(0) = 0

integrated on ``[0, t_end]`` with an explicit exponential Euler scheme whose
time step ``dt`` is the fidelity parameter. The simulator output is
``max_{1 <= n <= N} log |X_n|`` with ``N = ceil(t_end / dt)``.

Noise conventions (``scheme``):

* ``"euler"`` (default): exact deterministic propagator ``exp(A dt)`` then a
  velocity kick ``sqrt(2 pi S0 dt) * N(0, 1)`` at the end of each step.
* ``"exact"``: exact Gaussian transition of the linear SDE, with the full
  integrated noise covariance over the step.

``S0 = 1`` is the one-sided spectral density; the white noise has
autocovariance ``2 pi S0 delta(tau)``.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from ._accel import HAVE_NUMBA, njit, prange

T_END = 30.0
SPECTRAL_DENSITY = 1.0
OMEGA_BOUNDS = (0.0, 30.0)
ZETA_BOUNDS = (0.0, 1.0)
SCHEMES = ("euler", "exact")
# normals drawn per chunk of paths, bounds peak memory
_CHUNK = 2048


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OscillatorInput:
    omega0: float
    zeta: float
    dt: float
    t_end: float = T_END

    def __post_init__(self):
        if not OMEGA_BOUNDS[0] <= self.omega0 <= OMEGA_BOUNDS[1]:
            raise ValueError(f"omega0={self.omega0} outside {OMEGA_BOUNDS}")
        if not ZETA_BOUNDS[0] <= self.zeta <= ZETA_BOUNDS[1]:
            raise ValueError(f"zeta={self.zeta} outside {ZETA_BOUNDS}")
        if not 0.0 < self.dt <= 1.0:
            raise ValueError(f"dt={self.dt} outside (0, 1]")
        if not (self.t_end > 0 and self.dt <= self.t_end):
            raise ValueError("need 0 < dt <= t_end")

    @property
    def n_steps(self) -> int:
        return n_steps(self.dt, self.t_end)


def n_steps(dt: float, t_end: float = T_END) -> int:
    # round first so that 30 / 0.01 does not become 3001
    return int(math.ceil(round(t_end / dt, 9)))


def cost(dt: float) -> float:
    """Cost of one run at time step ``dt``, in milliseconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return 2.61 / dt + 5.45


def drift_matrix(omega0: float, zeta: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-omega0 ** 2, -2.0 * zeta * omega0]])


def propagator(omega0: float, zeta: float, dt: float) -> np.ndarray:
    """``exp(A dt)`` in closed form.

    With ``a = -zeta omega0`` and ``B = A - a I`` one has ``B^2 = delta2 I``,
    ``delta2 = omega0^2 (zeta^2 - 1)``, hence
    ``exp(A dt) = exp(a dt) [C I + S B]`` with ``C = cosh(sqrt(delta2) dt)``,
    ``S = sinh(sqrt(delta2) dt) / sqrt(delta2)`` (trigonometric when
    under-damped, a series near critical damping).
    """
    a = -zeta * omega0
    delta2 = omega0 * omega0 * (zeta * zeta - 1.0)
    u = delta2 * dt * dt
    if abs(u) < 1e-6:
        C = 1.0 + u / 2.0 + u * u / 24.0 + u ** 3 / 720.0
        S = dt * (1.0 + u / 6.0 + u * u / 120.0 + u ** 3 / 5040.0)
    elif delta2 > 0:
        r = math.sqrt(delta2)
        C = math.cosh(r * dt)
        S = math.sinh(r * dt) / r
    else:
        r = math.sqrt(-delta2)
        C = math.cos(r * dt)
        S = math.sin(r * dt) / r
    e = math.exp(a * dt)
    B = np.array([[-a, 1.0], [-omega0 ** 2, -2.0 * zeta * omega0 - a]])
    return e * (C * np.eye(2) + S * B)


def step_noise_cov(omega0: float, zeta: float, dt: float, scheme: str = "euler",
                   spectral_density: float = SPECTRAL_DENSITY) -> np.ndarray:
    """Covariance of the noise added to (X, V) over one step."""
    q = 2.0 * math.pi * spectral_density
    if scheme == "euler":
        return np.array([[0.0, 0.0], [0.0, q * dt]])
    if scheme == "exact":
        # Van Loan: integral of exp(As) G G' exp(A's) ds over [0, dt]
        A = drift_matrix(omega0, zeta)
        M = np.zeros((4, 4))
        M[:2, :2] = -A
        M[:2, 2:] = np.array([[0.0, 0.0], [0.0, q]])
        M[2:, 2:] = A.T
        E = expm(M * dt)
        F = E[2:, 2:].T
        Q = F @ E[:2, 2:]
        return 0.5 * (Q + Q.T)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _noise_factor(Q: np.ndarray) -> np.ndarray:
    """Lower factor (l00, l10, l11) of a 2 x 2 PSD covariance."""
    l00 = math.sqrt(max(Q[0, 0], 0.0))
    l10 = Q[1, 0] / l00 if l00 > 0 else 0.0
    l11 = math.sqrt(max(Q[1, 1] - l10 * l10, 0.0))
    return np.array([l00, l10, l11])


# --- integration kernels ----------------------------------------------------
# phi: (n, 4) propagators row-major; lf: (n, 3) noise factors;
# eps: (n, N, 2) standard normals. Returns max_n |X_n| per path.

def _integrate_numpy(phi, lf, eps):
    n, N, _ = eps.shape
    x = np.zeros(n)
    v = np.zeros(n)
    peak = np.zeros(n)
    a, b, c, d = phi[:, 0], phi[:, 1], phi[:, 2], phi[:, 3]
    l00, l10, l11 = lf[:, 0], lf[:, 1], lf[:, 2]
    for k in range(N):
        e0 = eps[:, k, 0]
        e1 = eps[:, k, 1]
        xn = (a * x + b * v) + l00 * e0
        vn = (c * x + d * v) + (l10 * e0 + l11 * e1)
        x = xn
        v = vn
        peak = np.maximum(peak, np.abs(x))
    return peak


def _integrate_loops(phi, lf, eps):
    n, N, _ = eps.shape
    peak = np.zeros(n)
    for i in prange(n):
        a = phi[i, 0]
        b = phi[i, 1]
        c = phi[i, 2]
        d = phi[i, 3]
        l00 = lf[i, 0]
        l10 = lf[i, 1]
        l11 = lf[i, 2]
        x = 0.0
        v = 0.0
        m = 0.0
        for k in range(N):
            e0 = eps[i, k, 0]
            e1 = eps[i, k, 1]
            xn = (a * x + b * v) + l00 * e0
            vn = (c * x + d * v) + (l10 * e0 + l11 * e1)
            x = xn
            v = vn
            ax = abs(x)
            if ax > m:
                m = ax
        peak[i] = m
    return peak


integrate_numpy = _integrate_numpy
if HAVE_NUMBA:
    integrate_numba = njit(parallel=True, cache=True)(_integrate_loops)
    _integrate = integrate_numba
else:
    integrate_numba = None
    _integrate = _integrate_numpy


def _draw_normals(rng: np.random.Generator, N: int) -> np.ndarray:
    # velocity noise is always column 1 so both schemes share the same draws
    return rng.standard_normal((N, 2))


def path_stream(seed, index: int) -> np.random.Generator:
    """Generator for path ``index`` of a batch seeded by ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (int(index),))
    else:
        ss = np.random.SeedSequence(seed, spawn_key=(int(index),))
    return np.random.default_rng(ss)


def _prepare(inputs: Sequence[OscillatorInput], scheme: str, noise_scale: float,
             spectral_density: float):
    phi = np.empty((len(inputs), 4))
    lf = np.empty((len(inputs), 3))
    for i, inp in enumerate(inputs):
        phi[i] = propagator(inp.omega0, inp.zeta, inp.dt).ravel()
        lf[i] = noise_scale * _noise_factor(
            step_noise_cov(inp.omega0, inp.zeta, inp.dt, scheme, spectral_density))
    return phi, lf


def _finish(peak: np.ndarray, inputs, offset: int = 0) -> np.ndarray:
    bad = ~np.isfinite(peak)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise SimulationError(f"non-finite state for input {offset + i}: {inputs[i]}")
    with np.errstate(divide="ignore"):
        return np.log(peak)


def simulate_with_normals(inputs: Sequence[OscillatorInput], eps: np.ndarray,
                          scheme: str = "euler", noise_scale: float = 1.0,
                          spectral_density: float = SPECTRAL_DENSITY,
                          backend: Optional[str] = None) -> np.ndarray:
    """Outputs for equal-step inputs driven by given normals ``(n, N, 2)``.

    ``backend`` is ``"numba"``, ``"numpy"`` or ``None`` (auto). A path with
    zero forcing returns ``-inf`` (all-zero trajectory).
    """
    phi, lf = _prepare(inputs, scheme, noise_scale, spectral_density)
    eps = np.ascontiguousarray(eps, dtype=float)
    if backend is None:
        fn = _integrate
    elif backend == "numba":
        if integrate_numba is None:
            raise RuntimeError("numba backend requested but unavailable")
        fn = integrate_numba
    elif backend == "numpy":
        fn = integrate_numpy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return _finish(fn(phi, lf, eps), inputs)


def simulate(inp: OscillatorInput, rng: np.random.Generator, scheme: str = "euler",
             noise_scale: float = 1.0, spectral_density: float = SPECTRAL_DENSITY) -> float:
    """One stochastic run; returns the peak log-amplitude."""
    eps = _draw_normals(rng, inp.n_steps)[None]
    out = simulate_with_normals([inp], eps, scheme, noise_scale, spectral_density)[0]
    if out == -np.inf:
        raise SimulationError("all-zero trajectory: the oscillator needs stochastic forcing")
    return float(out)


def batch_simulate(inputs: Sequence[OscillatorInput], seed, scheme: str = "euler",
                   spectral_density: float = SPECTRAL_DENSITY) -> np.ndarray:
    """``simulate`` on every input; element ``i`` uses stream ``path_stream(seed, i)``.

    Inputs are grouped by step count so each group runs as one kernel call.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("need at least one input")
    out = np.empty(len(inputs))
    steps = np.array([inp.n_steps for inp in inputs])
    for N in np.unique(steps):
        idx = np.flatnonzero(steps == N)
        for start in range(0, idx.size, _CHUNK):
            chunk = idx[start:start + _CHUNK]
            eps = np.empty((chunk.size, N, 2))
            for j, i in enumerate(chunk):
                eps[j] = _draw_normals(path_stream(seed, int(i)), int(N))
            sub = [inputs[i] for i in chunk]
            try:
                out[chunk] = simulate_with_normals(sub, eps, scheme, 1.0, spectral_density)
            except SimulationError as exc:
                raise SimulationError(f"batch chunk starting at index {int(chunk[0])}: {exc}") from exc
    if np.any(out == -np.inf):
        i = int(np.flatnonzero(out == -np.inf)[0])
        raise SimulationError(f"all-zero trajectory for input {i}")
    return out
