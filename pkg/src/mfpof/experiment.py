"""Replicated FB-vs-MAP study on the oscillator, plus the direct Monte Carlo
reference and kernel density helpers.

A report is a pure function of the configuration: every random draw comes
from a stream keyed by ``(master_seed, replication, role)``.
"""
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from multiprocessing import get_context
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import oscillator as osc
from .amh import AmhConfig, map_estimate, run_amh
from .design import NestedDesign, generate_nlhs, maximin_improve
from .hyperprior import PriorSpec, default_prior
from .mfgp import MfDataset
from .pof import PofConfig, PofSummary, coverage_report, quantile, sample_pof, summarize

logger = logging.getLogger(__name__)

VARIANTS = ("mf-fb", "mf-map", "sl-fb", "sl-map")
PUBLISHED_REFERENCE = 0.0573
MAX_FAILURE_FRACTION = 0.10
COVERAGE_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20)) + (0.99,)

# spawn-key roles
_DESIGN, _SIMULATE, _FIT, _POF = 0, 1, 2, 3
_REFERENCE_KEY = 2 ** 32 - 1


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class AmhSettings:
    p: int = 1000
    burn_in: int = 5000
    thin: int = 15
    adaptation_start: int = 1000
    eps: float = 1e-6
    initial_cov_factor: float = 0.01

    def config(self, seed) -> AmhConfig:
        return AmhConfig.for_samples(self.p, burn_in=self.burn_in, thin=self.thin,
                                     adaptation_start=self.adaptation_start, eps=self.eps,
                                     initial_cov_factor=self.initial_cov_factor, seed=seed)


@dataclass(frozen=True)
class PofSettings:
    m_inputs: int = 500
    q_paths: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    bounds: Tuple[Tuple[float, float], ...] = ((0.0, 30.0), (0.0, 1.0))
    levels: Tuple[float, ...] = (1.0, 0.5, 0.1, 0.05, 0.01)
    design_sizes: Tuple[int, ...] = (168, 56, 28, 14, 7)
    maximin_iterations: int = 10000
    r_out: float = 40.0
    noise_correlation: float = 0.99
    z_crit: float = 1.0
    t_ref: float = 0.01
    t_end: float = osc.T_END
    scheme: str = "euler"
    variant: str = "mf-fb"
    amh: AmhSettings = AmhSettings()
    map_restarts: int = 10
    pof: PofSettings = PofSettings()
    interval_levels: Tuple[float, ...] = COVERAGE_LEVELS
    replications: int = 240
    master_seed: int = 0
    reference_value: Optional[float] = None
    reference_runs: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in b) for b in self.bounds))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "design_sizes", tuple(int(v) for v in self.design_sizes))
        object.__setattr__(self, "interval_levels", tuple(float(v) for v in self.interval_levels))
        if isinstance(self.amh, dict):
            object.__setattr__(self, "amh", _build(AmhSettings, self.amh, "amh"))
        if isinstance(self.pof, dict):
            object.__setattr__(self, "pof", _build(PofSettings, self.pof, "pof"))
        if any(not a < b for a, b in self.bounds):
            raise ValueError("bounds must satisfy a < b")
        if list(self.levels) != sorted(self.levels, reverse=True) or len(set(self.levels)) != len(self.levels):
            raise ValueError("levels must be distinct and decreasing (lowest fidelity first)")
        if len(self.design_sizes) != len(self.levels):
            raise ValueError("need one design size per level")
        if self.t_ref not in self.levels:
            raise ValueError("t_ref must be one of the levels")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.scheme not in osc.SCHEMES:
            raise ValueError(f"scheme must be one of {osc.SCHEMES}")
        if self.replications < 1 or self.map_restarts < 1:
            raise ValueError("replications and map_restarts must be >= 1")
        if 0.95 not in self.interval_levels:
            raise ValueError("interval_levels must include 0.95")

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def multi_fidelity(self) -> bool:
        return self.variant.startswith("mf")

    @property
    def fully_bayesian(self) -> bool:
        return self.variant.endswith("fb")

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("bounds",):
            out[k] = [list(b) for b in out[k]]
        for k in ("levels", "design_sizes", "interval_levels"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        return _build(cls, obj, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **kw})


def _build(cls, obj: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**obj)


# --- seeding ----------------------------------------------------------------

def stream(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


def child(ss: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# --- data --------------------------------------------------------------------

def make_design(cfg: ExperimentConfig, replication: int) -> NestedDesign:
    rng = np.random.default_rng(stream(cfg.master_seed, replication, _DESIGN))
    des = generate_nlhs(cfg.d, cfg.design_sizes, rng)
    return maximin_improve(des, cfg.maximin_iterations, rng)


def make_dataset(cfg: ExperimentConfig, replication: int) -> MfDataset:
    """Fresh design and simulator outputs for one replication (all levels)."""
    des = make_design(cfg, replication)
    xs, ts = [], []
    for s, pts in enumerate(des.scaled(cfg.bounds)):
        xs.append(pts)
        ts.append(np.full(len(pts), cfg.levels[s]))
    x = np.vstack(xs)
    t = np.concatenate(ts)
    inputs = [osc.OscillatorInput(xi[0], xi[1], ti, cfg.t_end) for xi, ti in zip(x, t)]
    z = osc.batch_simulate(inputs, stream(cfg.master_seed, replication, _SIMULATE), cfg.scheme)
    return MfDataset(x, t, z, cfg.levels, cfg.bounds)


def variant_data(cfg: ExperimentConfig, data: MfDataset) -> MfDataset:
    return data if cfg.multi_fidelity else data.at_level(cfg.t_ref)


def variant_prior(cfg: ExperimentConfig) -> PriorSpec:
    S = len(cfg.levels) if cfg.multi_fidelity else 1
    return default_prior(cfg.d, S, cfg.r_out, cfg.bounds, cfg.noise_correlation,
                         multi_fidelity=cfg.multi_fidelity)


def write_dataset_csv(path, data: MfDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*[f"x_{k + 1}" for k in range(data.d)], "t", "z"])
        for xi, ti, zi in zip(data.x, data.t, data.z):
            w.writerow([*(repr(float(v)) for v in xi), repr(float(ti)), repr(float(zi))])


def read_dataset_csv(path, levels, bounds=None) -> MfDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    arr = np.array([[float(v) for v in r] for r in rows[1:]])
    return MfDataset(arr[:, :-2], arr[:, -2], arr[:, -1], levels, bounds)


# --- fitting -----------------------------------------------------------------

def fit_variant(cfg: ExperimentConfig, data: MfDataset, replication: int):
    """Hyper-parameter draws for the configured variant.

    Returns ``(thetas, info)``: the FB posterior sample, or the MAP point
    repeated ``p`` times so both variants produce the same number of PoF rows.
    """
    prior = variant_prior(cfg)
    ss = stream(cfg.master_seed, replication, _FIT)
    if cfg.fully_bayesian:
        post = run_amh(data, prior, cfg.amh.config(_int_seed(ss)))
        return post.thetas, {"acceptance_rate": post.acceptance_rate, "posterior": post}
    point = map_estimate(data, prior, cfg.map_restarts, np.random.default_rng(ss))
    return [point] * cfg.amh.p, {"map": point}


def pof_config(cfg: ExperimentConfig, replication: int) -> PofConfig:
    seed = _int_seed(stream(cfg.master_seed, replication, _POF))
    return PofConfig(cfg.z_crit, cfg.t_ref, cfg.pof.m_inputs, cfg.pof.q_paths, seed)


def run_replication(cfg: ExperimentConfig, replication: int, out_dir: Optional[str] = None) -> dict:
    with threadpool_limits(limits=1):
        data = variant_data(cfg, make_dataset(cfg, replication))
        thetas, info = fit_variant(cfg, data, replication)
        samples = sample_pof(data, thetas, pof_config(cfg, replication))
        summary = summarize(samples, cfg.interval_levels)
    theta_file = None
    if out_dir is not None:
        theta_file = f"thetas_{cfg.variant}_rep{replication:04d}.csv"
        _write_thetas(Path(out_dir) / theta_file, thetas if cfg.fully_bayesian else thetas[:1])
    rec = {"replication": replication, "n_observations": data.n,
           "level_counts": list(data.counts()), "theta_file": theta_file,
           "skipped_thetas": len(samples.skipped)}
    rec.update(summary.to_dict())
    if "acceptance_rate" in info:
        rec["acceptance_rate"] = info["acceptance_rate"]
    return rec


def _write_thetas(path, thetas) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(thetas[0].names)
        for h in thetas:
            w.writerow([repr(float(v)) for v in h.log_theta])


def _replication_job(args):
    cfg_dict, r, out_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        return run_replication(cfg, r, out_dir)
    except Exception as exc:  # recorded, not fatal, below the failure threshold
        return {"replication": r, "error": f"{type(exc).__name__}: {exc}"}


# --- reference ---------------------------------------------------------------

def reference_pof(cfg: ExperimentConfig, n_runs: int, seed=None) -> Tuple[float, float]:
    """Direct Monte Carlo of P(output > z_crit) at ``t_ref`` under uniform inputs.

    Returns the estimate and its binomial standard error.
    """
    if n_runs < 1000:
        raise ValueError("n_runs must be >= 1000")
    if seed is None:
        ss = stream(cfg.master_seed, _REFERENCE_KEY)
    elif isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(child(ss, 0))
    b = np.asarray(cfg.bounds)
    hits = 0
    block = 50_000
    for start in range(0, n_runs, block):
        n = min(block, n_runs - start)
        u = b[:, 0] + rng.uniform(size=(n, 2)) * (b[:, 1] - b[:, 0])
        inputs = [osc.OscillatorInput(w, zt, cfg.t_ref, cfg.t_end) for w, zt in u]
        out = osc.batch_simulate(inputs, child(ss, 1, start), cfg.scheme)
        hits += int(np.sum(out > cfg.z_crit))
    p = hits / n_runs
    return p, float(np.sqrt(p * (1 - p) / n_runs))


# --- density -----------------------------------------------------------------

def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    sd = float(np.std(x, ddof=1))
    q75, q25 = quantile(x, [0.75, 0.25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 1.06 * spread * x.size ** (-0.2)


def kde_density(samples, grid) -> np.ndarray:
    """Gaussian kernel density with Silverman's bandwidth, on ``grid``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2 or np.unique(x).size < 2:
        raise ValueError("kernel density needs at least two distinct samples")
    h = silverman_bandwidth(x)
    g = np.asarray(grid, dtype=float)
    out = np.empty(g.shape)
    flat = g.ravel()
    for start in range(0, flat.size, 256):
        u = (flat[start:start + 256, None] - x[None, :]) / h
        out.flat[start:start + 256] = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return out


def _density_block(values: List[float], n_grid: int = 200) -> Optional[dict]:
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.unique(v).size < 2:
        return None
    hi = float(v.max() * 1.2) if v.max() > 0 else 1.0
    grid = np.linspace(0.0, hi, n_grid)
    return {"grid": grid.tolist(), "density": kde_density(v, grid).tolist()}


# --- study -------------------------------------------------------------------

def aggregate(cfg: ExperimentConfig, records: List[dict], reference: dict) -> dict:
    ok = [r for r in records if "error" not in r]
    summaries = [PofSummary.from_dict(r) for r in ok]
    ref = reference["value"]
    cov = coverage_report(summaries, ref, cfg.interval_levels) if summaries else None
    medians = [s.median for s in summaries]
    edges = np.linspace(0.0, max(0.2, max(medians, default=0.0) * 1.05), 31)
    counts, _ = np.histogram(medians, bins=edges)
    i95 = list(cfg.interval_levels).index(0.95)
    lengths = [s.lengths[i95] for s in summaries]
    hit = [s.lower[i95] <= ref <= s.upper[i95] for s in summaries]
    return {
        "coverage": cov,
        "success_95": int(sum(hit)),
        "median_histogram": {"bin_edges": edges.tolist(), "counts": counts.tolist()},
        "length_density_95": {
            "all": _density_block(lengths),
            "containing": _density_block([l for l, h in zip(lengths, hit) if h]),
            "missing": _density_block([l for l, h in zip(lengths, hit) if not h]),
        },
    }


def resolve_reference(cfg: ExperimentConfig) -> dict:
    if cfg.reference_value is not None:
        return {"value": float(cfg.reference_value), "se": None, "n_runs": None, "source": "config",
                "published_value": PUBLISHED_REFERENCE}
    with threadpool_limits(limits=1):
        p, se = reference_pof(cfg, cfg.reference_runs)
    return {"value": p, "se": se, "n_runs": cfg.reference_runs, "source": "monte_carlo",
            "published_value": PUBLISHED_REFERENCE}


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Run every replication of the configured variant and aggregate.

    ``workers > 1`` distributes replications over processes; the report does
    not depend on it.
    """
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        out_dir = str(out_dir)
    reference = resolve_reference(cfg)
    cfg_dict = cfg.to_dict()
    jobs = [(cfg_dict, r, out_dir) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as ex:
            records = list(ex.map(_replication_job, jobs))
    else:
        records = [_replication_job(j) for j in jobs]
    records.sort(key=lambda r: r["replication"])
    failures = [r for r in records if "error" in r]
    for f in failures:
        logger.warning("replication %d failed: %s", f["replication"], f["error"])
    if len(failures) > MAX_FAILURE_FRACTION * cfg.replications:
        raise ExperimentError(f"{len(failures)} of {cfg.replications} replications failed")
    return {
        "schema": "mfpof.experiment.v1",
        "config": cfg_dict,
        "reference": reference,
        "replications": [r for r in records if "error" not in r],
        "failures": failures,
        "aggregate": aggregate(cfg, records, reference),
    }


_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}
_DENSITY = {"oneOf": [{"type": "null"}, {
    "type": "object", "required": ["grid", "density"],
    "properties": {"grid": _NUMS, "density": _NUMS}}]}

#: JSON Schema (draft 2020-12) of the document written by ``write_report``.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "config", "reference", "replications", "failures", "aggregate"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": "mfpof.experiment.v1"},
        "config": {"type": "object", "required": ["variant", "master_seed", "replications"]},
        "reference": {
            "type": "object", "required": ["value", "se", "n_runs", "source", "published_value"],
            "properties": {"value": _NUM, "se": {"type": ["number", "null"]},
                           "n_runs": {"type": ["integer", "null"]},
                           "source": {"enum": ["config", "monte_carlo"]}, "published_value": _NUM}},
        "replications": {"type": "array", "items": {
            "type": "object",
            "required": ["replication", "n_observations", "level_counts", "median", "levels",
                         "lower", "upper", "lengths", "skipped_thetas"],
            "properties": {"replication": {"type": "integer", "minimum": 0},
                           "n_observations": {"type": "integer", "minimum": 1},
                           "level_counts": {"type": "array", "items": {"type": "integer"}},
                           "theta_file": {"type": ["string", "null"]},
                           "median": _NUM, "levels": _NUMS, "lower": _NUMS, "upper": _NUMS,
                           "lengths": _NUMS, "skipped_thetas": {"type": "integer", "minimum": 0},
                           "acceptance_rate": _NUM}}},
        "failures": {"type": "array", "items": {
            "type": "object", "required": ["replication", "error"],
            "properties": {"replication": {"type": "integer"}, "error": {"type": "string"}}}},
        "aggregate": {
            "type": "object",
            "required": ["coverage", "success_95", "median_histogram", "length_density_95"],
            "properties": {
                "coverage": {"oneOf": [{"type": "null"}, {
                    "type": "object", "required": ["reference", "levels", "coverage", "n_experiments"],
                    "properties": {"reference": _NUM, "levels": _NUMS, "coverage": _NUMS,
                                   "n_experiments": {"type": "integer"}}}]},
                "success_95": {"type": "integer", "minimum": 0},
                "median_histogram": {
                    "type": "object", "required": ["bin_edges", "counts"],
                    "properties": {"bin_edges": _NUMS, "counts": {"type": "array", "items": {"type": "integer"}}}},
                "length_density_95": {
                    "type": "object", "required": ["all", "containing", "missing"],
                    "properties": {"all": _DENSITY, "containing": _DENSITY, "missing": _DENSITY}}}},
    },
}


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_report(report))
