"""Posterior sampling of the probability of failure.

For every hyper-parameter draw ``theta_j``: draw ``m`` inputs from the input
distribution, draw ``q`` joint posterior paths of the latent mean at the
reference level, map each value through
``Phi((xi - z_crit) / sqrt(lambda_j(t_ref)))`` and average over the inputs.
This yields the ``p x q`` matrix of PoF draws.
"""
import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .hyperprior import HyperParams
from .mfgp import MfDataset, ModelEvaluationError, fit, sample_paths

logger = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.10


class PofError(RuntimeError):
    pass


def uniform_sampler(bounds) -> Callable[[np.random.Generator, int], np.ndarray]:
    b = np.asarray(bounds, dtype=float)

    def draw(rng: np.random.Generator, m: int) -> np.ndarray:
        return b[:, 0] + rng.uniform(size=(m, b.shape[0])) * (b[:, 1] - b[:, 0])
    return draw


@dataclass(frozen=True)
class PofConfig:
    z_crit: float
    t_ref: float
    m_inputs: int = 500
    q_paths: int = 20
    seed: int = 0
    input_sampler: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.m_inputs < 1 or self.q_paths < 1:
            raise ValueError("m_inputs and q_paths must be >= 1")

    def echo(self) -> dict:
        return {"z_crit": self.z_crit, "t_ref": self.t_ref, "m_inputs": self.m_inputs,
                "q_paths": self.q_paths, "seed": self.seed}


@dataclass
class PofSampleSet:
    samples: np.ndarray           # (p, q)
    theta_index: np.ndarray       # index into the input theta list, per row
    config: dict
    skipped: List[int] = field(default_factory=list)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.size == 0:
            raise ValueError("samples must be a nonempty p x q matrix")
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("PoF samples must lie in [0, 1]")
        self.samples = s

    def flat(self) -> np.ndarray:
        return self.samples.ravel()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "l", "P"])
            for j, row in zip(self.theta_index, self.samples):
                for l, v in enumerate(row):
                    w.writerow([int(j), l, repr(float(v))])


def _theta_stream(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))


def pof_draws(xi: np.ndarray, lam_ref: float, z_crit: float) -> np.ndarray:
    """Per path, the input average of ``Phi((xi - z_crit) / sqrt(lam_ref))``.

    ``xi`` is ``(q, m)``: q paths evaluated at m inputs. The transform is
    applied pointwise before averaging.
    """
    return ndtr((xi - z_crit) / np.sqrt(lam_ref)).mean(axis=1)


def sample_pof(data: MfDataset, thetas: Sequence[HyperParams], cfg: PofConfig,
               bounds=None) -> PofSampleSet:
    """Draw the ``len(thetas) x q`` PoF sample.

    Row j uses its own stream derived from ``(cfg.seed, j)``, so the result
    does not depend on evaluation order. A plug-in estimate is the same call
    with a single theta repeated.
    """
    thetas = list(thetas)
    if not thetas:
        raise ValueError("need at least one hyper-parameter vector")
    lev = np.asarray(data.levels)
    ref = np.flatnonzero(np.isclose(lev, cfg.t_ref, rtol=1e-12, atol=0))
    if ref.size != 1:
        raise ValueError(f"t_ref={cfg.t_ref} is not one of the observed levels {data.levels}")
    s_ref = int(ref[0])
    sampler = cfg.input_sampler
    if sampler is None:
        b = bounds if bounds is not None else data.bounds
        if b is None:
            raise ValueError("an input sampler or domain bounds are required")
        sampler = uniform_sampler(b)

    rows, kept, skipped = [], [], []
    gp_cache = {}
    for j, theta in enumerate(thetas):
        rng = _theta_stream(cfg.seed, j)
        key = theta.log_theta.tobytes()
        try:
            if key not in gp_cache:
                gp_cache.clear()
                gp_cache[key] = fit(theta, data)
            gp = gp_cache[key]
            x = sampler(rng, cfg.m_inputs)
            lam = float(theta.noise_variances()[s_ref])
            row = pof_draws(sample_paths(gp, x, cfg.t_ref, cfg.q_paths, rng), lam, cfg.z_crit)
        except ModelEvaluationError as exc:
            logger.warning("skipping theta %d: %s", j, exc)
            skipped.append(j)
            continue
        rows.append(row)
        kept.append(j)
    if len(skipped) > MAX_SKIP_FRACTION * len(thetas):
        raise PofError(f"{len(skipped)} of {len(thetas)} hyper-parameter draws failed")
    if skipped:
        warnings.warn(f"{len(skipped)} hyper-parameter draws skipped in PoF sampling")
    return PofSampleSet(np.array(rows), np.array(kept), cfg.echo(), skipped)


def quantile(x, probs) -> np.ndarray:
    """Type-7 quantiles (linear interpolation between order statistics)."""
    return np.quantile(np.asarray(x, dtype=float), probs, method="linear")


@dataclass
class PofSummary:
    median: float
    levels: List[float]
    lower: List[float]
    upper: List[float]

    @property
    def lengths(self) -> List[float]:
        return [u - l for l, u in zip(self.lower, self.upper)]

    def interval(self, level: float):
        i = int(np.argmin(np.abs(np.asarray(self.levels) - level)))
        if not np.isclose(self.levels[i], level):
            raise KeyError(f"no interval at level {level}")
        return self.lower[i], self.upper[i]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lengths"] = self.lengths
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PofSummary":
        return cls(float(obj["median"]), list(obj["levels"]), list(obj["lower"]), list(obj["upper"]))


def summarize(samples, levels: Sequence[float] = (0.95,)) -> PofSummary:
    """Median and equal-tailed intervals over the flattened PoF sample."""
    flat = samples.flat() if isinstance(samples, PofSampleSet) else np.asarray(samples, float).ravel()
    if flat.size == 0:
        raise ValueError("empty sample")
    levels = [float(g) for g in levels]
    if any(not 0 < g < 1 for g in levels):
        raise ValueError("interval levels must lie in (0, 1)")
    g = np.asarray(levels)
    lo = quantile(flat, (1 - g) / 2) if levels else np.array([])
    hi = quantile(flat, (1 + g) / 2) if levels else np.array([])
    return PofSummary(float(quantile(flat, 0.5)), levels, [float(v) for v in lo], [float(v) for v in hi])


def coverage_report(summaries: Sequence[PofSummary], reference: float,
                    levels: Optional[Sequence[float]] = None) -> dict:
    """Fraction of experiments whose level-g interval contains ``reference``."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("need at least one experiment")
    levels = summaries[0].levels if levels is None else [float(g) for g in levels]
    cov = []
    for g in levels:
        hits = [lo <= reference <= hi for lo, hi in (s.interval(g) for s in summaries)]
        cov.append(float(np.mean(hits)))
    return {"reference": float(reference), "levels": list(levels), "coverage": cov,
            "n_experiments": len(summaries)}


def write_summary_json(path, summary: PofSummary, extra: Optional[dict] = None) -> None:
    obj = summary.to_dict()
    if extra:
        obj.update(extra)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
