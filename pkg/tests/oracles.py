"""Independent dense reference implementations used by the tests.

Nothing here imports the package's kernel or kriging code: covariances are
rebuilt from the closed-form Matern 5/2 expression and linear algebra uses
explicit solves.
"""
import numpy as np


def matern52(h):
    s = np.sqrt(5.0) * h
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def mf_cov(log_theta, d, x1, t1, x2, t2, t_lf):
    """Dense multi-fidelity covariance from a log-parameter vector."""
    th = np.exp(np.asarray(log_theta, dtype=float))
    s2, rho0, g, rhoe, L = th[0], th[1:1 + d], th[1 + d], th[2 + d:2 + 2 * d], th[2 + 2 * d]
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    diff = x1[:, None, :] - x2[None, :, :]
    h0 = np.sqrt(np.sum((diff / rho0) ** 2, axis=-1))
    he = np.sqrt(np.sum((diff / rhoe) ** 2, axis=-1))
    r = (np.minimum.outer(np.asarray(t1, float), np.asarray(t2, float)) / t_lf) ** L
    return s2 * matern52(h0) + r * s2 * g * matern52(he)


def noise(log_theta, S, level_index):
    return np.exp(np.asarray(log_theta)[-S:])[level_index]


def log_likelihood_given_mean(m, z, K):
    n = len(z)
    r = z - m
    sign, logdet = np.linalg.slogdet(K)
    return -0.5 * (n * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(K, r))


def kriging(K, k, kuu, z):
    """Ordinary kriging mean and covariance with explicit inverses."""
    Ki = np.linalg.inv(K)
    one = np.ones(len(z))
    a = one @ Ki @ one
    beta = (one @ Ki @ z) / a
    mean = beta + k.T @ Ki @ (z - beta * one)
    u = 1.0 - k.T @ Ki @ one
    cov = kuu - k.T @ Ki @ k + np.outer(u, u) / a
    return mean, cov


def random_case(rng, n, d=2, levels=(1.0, 0.3, 0.05), log_noise=None):
    """Random small multi-fidelity dataset and log-parameter vector."""
    from mfpof.hyperprior import HyperParams
    from mfpof.mfgp import MfDataset

    S = len(levels)
    x = rng.uniform(size=(n, d))
    idx = rng.integers(0, S, size=n)
    t = np.asarray(levels)[idx]
    z = rng.normal(size=n) + 2.0
    log_theta = np.concatenate([
        [rng.normal(0, 0.5)], rng.normal(-1, 0.4, size=d), [rng.normal(-1, 0.5)],
        rng.normal(-1, 0.4, size=d), [np.log(rng.uniform(1, 6))],
        rng.normal(-3, 1, size=S) if log_noise is None else np.full(S, log_noise),
    ])
    data = MfDataset(x, t, z, levels)
    return data, HyperParams(log_theta, d, S)


def double_mc_pof(data, theta, z_crit, t_ref, bounds, n, rng, s_ref):
    """Brute-force PoF: uniform inputs, Gaussian latent value, additive noise.

    Returns ``(estimate, standard error)`` of P(xi(X) + noise > z_crit) under
    the ordinary-kriging posterior at fixed ``theta``.
    """
    d = data.d
    lt = theta.log_theta
    K = mf_cov(lt, d, data.x, data.t, data.x, data.t, data.t_lf)
    K = K + np.diag(noise(lt, data.S, data.level_index))
    b = np.asarray(bounds, dtype=float)
    hits = 0
    done = 0
    while done < n:
        m = min(20000, n - done)
        x = b[:, 0] + rng.uniform(size=(m, d)) * (b[:, 1] - b[:, 0])
        tu = np.full(m, t_ref)
        k = mf_cov(lt, d, data.x, data.t, x, tu, data.t_lf)
        prior_var = np.exp(lt[0]) * (1.0 + (t_ref / data.t_lf) ** np.exp(lt[2 + 2 * d]) * np.exp(lt[1 + d]))
        Ki = np.linalg.inv(K)
        one = np.ones(data.n)
        a = one @ Ki @ one
        beta = one @ Ki @ data.z / a
        mean = beta + k.T @ Ki @ (data.z - beta)
        u = 1.0 - k.T @ Ki @ one
        var = prior_var - np.einsum("ij,ik,kj->j", k, Ki, k) + u * u / a
        xi = mean + np.sqrt(np.clip(var, 0, None)) * rng.standard_normal(m)
        y = xi + np.sqrt(np.exp(lt[-data.S + s_ref])) * rng.standard_normal(m)
        hits += int(np.sum(y > z_crit))
        done += m
    p = hits / n
    return p, np.sqrt(p * (1 - p) / n)
