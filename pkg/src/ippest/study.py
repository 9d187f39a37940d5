"""Monte Carlo replication harness for the estimators' limit distributions.

Replication ``r`` simulates its ``n`` paths from its own seed streams, runs
every requested estimator on that one sample and records either the
estimates at the requested checkpoints or the kind of error raised.
Statistics are computed over the successful replications only.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, DimensionMismatch, EstimationError, StudyAborted, TooFewSamples
from .mme import MomentSpec, default_moments, mme_covariance, mme_estimate
from .model import IntensityModel
from .multistep import (
    CLIP_MARGIN,
    fisher_inverse,
    learning_size,
    one_step,
    one_step_process,
    two_step_process,
)
from .paths import simulate_sample
from .quad import DEFAULT, QuadConfig

ESTIMATORS = ("mme", "onestep", "onestep_process", "twostep_process")
PROCESSES = ("onestep_process", "twostep_process")
DEFAULT_DELTA = {"onestep": 0.6, "onestep_process": 0.6, "twostep_process": 4.0 / 9.0}
MODE = {"onestep": "onestep", "onestep_process": "onestep", "twostep_process": "twostep"}
KS_CRITICAL = 1.63  # alpha ~ 0.01
MIN_NORMALITY_SAMPLES = 30
MAX_FAILURE_RATE = 0.5


@dataclass(frozen=True)
class StudyConfig:
    model: IntensityModel
    theta0: tuple
    n: int
    M: int
    estimators: tuple = ("mme",)
    delta: dict = field(default_factory=dict)
    base_seed: int = 0
    s_values: tuple = (1.0,)
    moments: MomentSpec | None = None
    cfg: QuadConfig = DEFAULT
    workers: int = 1
    replication_offset: int = 0
    method: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta0", tuple(float(v) for v in np.atleast_1d(self.theta0)))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "s_values", tuple(float(s) for s in self.s_values))
        object.__setattr__(self, "delta", {**{e: DEFAULT_DELTA[e] for e in self.estimators if e in DEFAULT_DELTA}, **dict(self.delta)})
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if self.n < 4:
            raise ConfigError(f"n must be >= 4, got {self.n}")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or len(set(self.estimators)) != len(self.estimators):
            raise ConfigError(f"estimators must be distinct members of {ESTIMATORS}, got {list(self.estimators)}")
        extra = set(self.delta) - set(self.estimators)
        if extra:
            raise ConfigError(f"delta given for estimators not in the study: {sorted(extra)}")
        if not self.s_values or any(not 0.0 < s <= 1.0 for s in self.s_values):
            raise ConfigError(f"s_values must lie in (0, 1], got {list(self.s_values)}")
        if len(self.theta0) != self.model.param_dim:
            raise ConfigError(f"theta0 has {len(self.theta0)} entries, model expects {self.model.param_dim}")
        if self.workers < 1 or self.replication_offset < 0:
            raise ConfigError("workers must be >= 1 and replication_offset >= 0")
        moments = self.moments or default_moments(self.model)
        moments.check(self.model)
        object.__setattr__(self, "moments", moments)
        for est in self.estimators:
            if est == "mme":
                continue
            try:
                split = learning_size(self.n, self.delta[est], MODE[est])
            except EstimationError as exc:
                raise ConfigError(f"{est}: {exc}") from None
            low = [k for k in self.checkpoints(est) if k <= split.N]
            if low:
                raise ConfigError(f"{est}: checkpoint k={low[0]} does not exceed the learning size N={split.N}")

    def checkpoints(self, estimator: str) -> list[int]:
        """k = floor(s n) for process estimators, k = n otherwise."""
        if estimator not in PROCESSES:
            return [self.n]
        return sorted({math.floor(s * self.n + 1e-9) for s in self.s_values})


@dataclass
class Replication:
    index: int
    estimates: dict  # estimator -> (K, d) array
    errors: dict  # estimator -> error kind


def _run_replication(config: StudyConfig, r: int) -> Replication:
    model, theta0 = config.model, np.asarray(config.theta0)
    sample = simulate_sample(model, theta0, config.n, config.base_seed, r + config.replication_offset, config.method)
    estimates, errors = {}, {}
    prelims = {}
    for est in config.estimators:
        try:
            if est == "mme":
                estimates[est] = mme_estimate(sample, config.moments, model, config.cfg).theta[None, :]
                continue
            split = learning_size(config.n, config.delta[est], MODE[est])
            if split.N not in prelims:
                try:
                    prelim = mme_estimate(sample.subset(0, split.N), config.moments, model, config.cfg).theta
                    prelims[split.N] = model.space.clip(prelim, CLIP_MARGIN)[0]
                except EstimationError as exc:
                    prelims[split.N] = exc
            theta_bar = prelims[split.N]
            if isinstance(theta_bar, EstimationError):
                raise theta_bar
            if est == "onestep":
                estimates[est] = one_step(model, sample, theta_bar, split, config.cfg)[None, :]
                continue
            run = one_step_process if est == "onestep_process" else two_step_process
            trace = run(model, sample, theta_bar, split, cfg=config.cfg)
            estimates[est] = np.array([trace.at(k) for k in config.checkpoints(est)])
        except EstimationError as exc:
            errors[est] = exc.kind
    return Replication(r, estimates, errors)


def _run_chunk(args):
    config, indices = args
    return [_run_replication(config, r) for r in indices]


def compare_to_target(empirical, target) -> float:
    """Relative Frobenius distance ||E - T|| / ||T||."""
    E, T = np.atleast_2d(np.asarray(empirical, dtype=float)), np.atleast_2d(np.asarray(target, dtype=float))
    if E.shape != T.shape:
        raise DimensionMismatch(f"shapes {E.shape} and {T.shape} differ")
    norm = np.linalg.norm(T)
    if norm == 0:
        raise ValueError("target matrix is zero")
    return float(np.linalg.norm(E - T) / norm)


@dataclass
class NormalityDiagnostics:
    skewness: np.ndarray
    kurtosis: np.ndarray
    ks: np.ndarray
    threshold: float
    flagged: np.ndarray

    def to_json(self) -> dict:
        return {
            "skewness": _floats(self.skewness),
            "excess_kurtosis": _floats(self.kurtosis),
            "ks": _floats(self.ks),
            "ks_threshold": self.threshold,
            "flagged": [bool(f) for f in self.flagged],
        }


def normality_diagnostics(z) -> NormalityDiagnostics:
    """Per-component skewness, excess kurtosis and KS distance to the standard normal.

    ``z`` holds standardized samples in rows.  Components with zero spread
    get NaN moments and are always flagged.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    m = z.shape[0]
    if m < MIN_NORMALITY_SAMPLES:
        raise TooFewSamples(f"normality diagnostics need at least {MIN_NORMALITY_SAMPLES} samples, got {m}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        skew = stats.skew(z, axis=0)
        kurt = stats.kurtosis(z, axis=0)
    constant = np.ptp(z, axis=0) == 0
    skew = np.where(constant, np.nan, skew)
    kurt = np.where(constant, np.nan, kurt)
    ks = np.array([stats.kstest(z[:, i], "norm").statistic for i in range(z.shape[1])])
    threshold = KS_CRITICAL / math.sqrt(m)
    return NormalityDiagnostics(skew, kurt, ks, threshold, (ks > threshold) | constant)


def inverse_sqrt(T) -> np.ndarray:
    """Symmetric T^(-1/2) by eigendecomposition."""
    vals, vecs = np.linalg.eigh(np.atleast_2d(T))
    if vals[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def standardize(deviations, target) -> np.ndarray:
    """Rows x -> T^(-1/2) x, so N(0, T) rows become N(0, I)."""
    return np.atleast_2d(deviations) @ inverse_sqrt(target)


@dataclass
class Checkpoint:
    k: int
    s: float | None
    successes: int
    mean: np.ndarray
    bias: np.ndarray
    bias_se: np.ndarray
    cov_truth: np.ndarray
    cov_centered: np.ndarray
    rel_frob: float
    normality: NormalityDiagnostics | None

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "s": self.s,
            "successes": self.successes,
            "mean": _floats(self.mean),
            "bias": _floats(self.bias),
            "bias_se": _floats(self.bias_se),
            "cov_about_truth": _matrix(self.cov_truth),
            "cov_centered": _matrix(self.cov_centered),
            "rel_frob_vs_target": self.rel_frob,
            "normality": None if self.normality is None else self.normality.to_json(),
        }


@dataclass
class EstimatorSummary:
    name: str
    target_name: str
    target: np.ndarray
    failures: dict
    checkpoints: list

    @property
    def failure_count(self) -> int:
        return sum(self.failures.values())

    def at(self, k: int) -> Checkpoint:
        for cp in self.checkpoints:
            if cp.k == k:
                return cp
        raise KeyError(f"no checkpoint k={k} for {self.name}")

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


@dataclass
class StudyReport:
    config: StudyConfig
    estimates: dict  # estimator -> (M, K, d) array, NaN rows for failed replications
    errors: dict  # estimator -> list of error kind or None per replication
    summaries: dict  # estimator -> EstimatorSummary
    fisher_inverse: np.ndarray | None
    mme_covariance: np.ndarray | None

    def summary(self, estimator: str) -> EstimatorSummary:
        return self.summaries[estimator]

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "model": cfg.model.to_config(np.asarray(cfg.theta0)),
            "theta0": list(cfg.theta0),
            "n": cfg.n,
            "M": cfg.M,
            "base_seed": cfg.base_seed,
            "replication_offset": cfg.replication_offset,
            "moments": cfg.moments.to_config(),
            "delta": {e: cfg.delta[e] for e in cfg.estimators if e in cfg.delta},
            "s_values": list(cfg.s_values),
            "targets": {
                "fisher_inverse": None if self.fisher_inverse is None else _matrix(self.fisher_inverse),
                "mme_covariance": None if self.mme_covariance is None else _matrix(self.mme_covariance),
            },
            "estimators": {
                name: {
                    "target": s.target_name,
                    "failures": dict(sorted(s.failures.items())),
                    "failure_rate": s.failure_count / cfg.M,
                    "checkpoints": [cp.to_json() for cp in s.checkpoints],
                }
                for name, s in self.summaries.items()
            },
            "replications": {
                name: [
                    {"error": err} if err else {"estimates": _matrix(est)}
                    for est, err in zip(self.estimates[name], self.errors[name])
                ]
                for name in cfg.estimators
            },
        }

    def summary_csv(self) -> str:
        d = self.config.model.param_dim
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        header = ["estimator", "k", "rel_frob_vs_target"]
        for name in ("bias", "skewness", "kurtosis", "ks"):
            header += [f"{name}_{i + 1}" for i in range(d)]
        writer.writerow(header + ["failures"])
        for name, s in self.summaries.items():
            for cp in s.checkpoints:
                diag = cp.normality
                nan = [math.nan] * d
                row = [name, cp.k, repr(cp.rel_frob)]
                row += [repr(float(v)) for v in cp.bias]
                for vals in (diag.skewness, diag.kurtosis, diag.ks) if diag else (nan, nan, nan):
                    row += [repr(float(v)) for v in vals]
                writer.writerow(row + [s.failure_count])
        return out.getvalue()


def _floats(values) -> list:
    # NaN and infinities are not valid JSON
    return [float(v) if math.isfinite(v) else None for v in np.ravel(values)]


def _matrix(m) -> list:
    return [_floats(row) for row in np.atleast_2d(m)]


def _replicate(config: StudyConfig) -> list[Replication]:
    indices = list(range(config.M))
    if config.workers == 1:
        return [_run_replication(config, r) for r in indices]
    chunks = [indices[i:: config.workers] for i in range(config.workers)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        results = [rep for chunk in pool.map(_run_chunk, [(config, c) for c in chunks]) for rep in chunk]
    return sorted(results, key=lambda rep: rep.index)


def _checkpoint(est, theta0, k, s, target) -> Checkpoint:
    dev = est - theta0
    count = len(est)
    cov_truth = k * (dev.T @ dev) / count
    cov_centered = k * np.atleast_2d(np.cov(est, rowvar=False)) if count > 1 else np.full_like(cov_truth, np.nan)
    mean = est.mean(axis=0)
    bias_se = np.sqrt(np.diag(cov_centered) / k / count)
    try:
        normality = normality_diagnostics(math.sqrt(k) * standardize(dev, target))
    except TooFewSamples:
        normality = None
    return Checkpoint(
        k, s, count, mean, mean - theta0, bias_se,
        0.5 * (cov_truth + cov_truth.T), 0.5 * (cov_centered + cov_centered.T),
        compare_to_target(cov_truth, target), normality,
    )


def run_study(config: StudyConfig) -> StudyReport:
    """Run ``config.M`` replications and summarise each estimator against its limit covariance.

    The MME is compared to its sandwich covariance, the scoring estimators to
    the inverse Fisher information.  Covariances are second moments about
    the truth scaled by ``k`` (``n`` for the non-process estimators).
    """
    reps = _replicate(config)
    d, M = config.model.param_dim, config.M
    theta0 = np.asarray(config.theta0)

    estimates, errors = {}, {}
    for est in config.estimators:
        K = len(config.checkpoints(est))
        arr = np.full((M, K, d), np.nan)
        errs = []
        for rep in reps:
            if est in rep.estimates:
                arr[rep.index] = rep.estimates[est]
            errs.append(rep.errors.get(est))
        estimates[est], errors[est] = arr, errs
        failed = sum(e is not None for e in errs)
        if failed > MAX_FAILURE_RATE * M:
            kinds = sorted({e for e in errs if e})
            raise StudyAborted(f"{est}: {failed} of {M} replications failed ({', '.join(kinds)})")

    finv = mme_cov = None
    if any(e != "mme" for e in config.estimators):
        finv, _ = fisher_inverse(config.model, theta0, config.cfg)
    if "mme" in config.estimators:
        mme_cov = mme_covariance(config.model, theta0, config.moments, config.cfg)

    summaries = {}
    for est in config.estimators:
        target, target_name = (mme_cov, "mme_covariance") if est == "mme" else (finv, "fisher_inverse")
        ok = np.array([e is None for e in errors[est]])
        failures: dict[str, int] = {}
        for e in errors[est]:
            if e:
                failures[e] = failures.get(e, 0) + 1
        cps = []
        ks = config.checkpoints(est)
        s_for_k = {math.floor(s * config.n + 1e-9): s for s in config.s_values}
        for i, k in enumerate(ks):
            s = s_for_k.get(k) if est in PROCESSES else None
            cps.append(_checkpoint(estimates[est][ok, i, :], theta0, k, s, target))
        summaries[est] = EstimatorSummary(est, target_name, target, failures, cps)
    return StudyReport(config, estimates, errors, summaries, finv, mme_cov)
