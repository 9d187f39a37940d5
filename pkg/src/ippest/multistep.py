"""One-step MLE and the one-/two-step MLE-processes.

The learning paths ``1..N`` only feed the preliminary estimator; every
correction below uses paths ``N+1..k`` with the score evaluated at the
(clipped) preliminary value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeltaOutOfRange, SingularFisher
from .mme import MomentSpec, default_moments, mme_estimate
from .model import IntensityModel
from .paths import PoissonPath, Sample
from .quad import DEFAULT, QuadConfig, fisher_info, integrate, integrate_model

CLIP_MARGIN = 1e-6
MAX_CONDITION = 1e10

MODES = ("onestep", "twostep")
_DELTA_RANGE = {"onestep": (0.5, 1.0, False), "twostep": (1.0 / 3.0, 0.5, True)}


@dataclass(frozen=True)
class LearningSplit:
    n: int
    delta: float
    N: int
    mode: str = "onestep"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 1 <= self.N < self.n:
            raise DeltaOutOfRange(f"learning size N={self.N} must satisfy 1 <= N < n={self.n}")


def _floor_power(n: int, delta: float) -> int:
    """floor(n**delta), robust when n**delta lands within rounding of an integer."""
    N = math.floor(n**delta)
    for cand in (N + 1, N):
        # cand <= n**delta  <=>  cand**(1/delta) <= n; compare near-ties with a relative slack
        if cand > 0 and cand ** (1.0 / delta) <= n * (1 + 1e-12):
            return cand
    return N - 1


def learning_size(n: int, delta: float, mode: str = "onestep") -> LearningSplit:
    """N = floor(n**delta) learning paths with delta in the mode's admissible range.

    onestep needs delta in (1/2, 1); twostep needs delta in (1/3, 1/2].
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    lo, hi, hi_closed = _DELTA_RANGE[mode]
    inside = lo < delta < hi or (hi_closed and delta == hi)
    if not inside:
        interval = f"({lo:.6g}, {hi:.6g}{']' if hi_closed else ')'}"
        raise DeltaOutOfRange(f"delta={delta} outside {interval} for {mode}")
    if n < 4:
        raise DeltaOutOfRange(f"need at least 4 paths, got n={n}")
    return LearningSplit(n, float(delta), _floor_power(n, delta), mode)


def fisher_inverse(model: IntensityModel, theta, cfg: QuadConfig = DEFAULT) -> tuple[np.ndarray, float]:
    """Inverse Fisher matrix by symmetric eigendecomposition, with its condition number."""
    info = fisher_info(model, theta, cfg)
    vals, vecs = np.linalg.eigh(info)
    cond = float(vals[-1] / vals[0])
    if cond > MAX_CONDITION:
        raise SingularFisher(f"Fisher information condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    return (vecs / vals) @ vecs.T, cond


def compensator(model: IntensityModel, theta_bar, theta=None, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Integral of score(theta_bar, t) * lambda(theta, t) dt.

    With ``theta`` omitted this is the integral of grad(lambda) at theta_bar,
    the compensator of the one-step correction.
    """
    theta_bar = model.theta(theta_bar)
    theta = theta_bar if theta is None else model.theta(theta)
    if theta is theta_bar:
        return np.atleast_1d(integrate_model(model, theta_bar, lambda t: model.intensity_grad(theta_bar, t), cfg))

    lo1, hi1 = model.bounds(theta_bar)
    lo2, hi2 = model.bounds(theta)

    def integrand(t):
        return model.log_intensity_grad(theta_bar, t) * model.intensity(theta, t)[:, None]

    points = model.breakpoints(theta_bar) + model.breakpoints(theta)
    return np.atleast_1d(integrate(integrand, min(lo1, lo2), max(hi1, hi2), cfg, points=points))


def event_scores(model: IntensityModel, theta_bar, sample: Sample) -> np.ndarray:
    """Per-path sums of score(theta_bar, t_i) over event times, shape (n, d)."""
    d = model.param_dim
    if not sample.times.size:
        return np.zeros((sample.n, d))
    s = np.atleast_2d(model.log_intensity_grad(theta_bar, sample.times))
    return np.stack([np.bincount(sample.path_index, weights=s[:, i], minlength=sample.n) for i in range(d)], axis=-1)


def path_score(model: IntensityModel, theta_bar, path: PoissonPath, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Score of one path: sum of score(theta_bar, t_i) minus the integral of grad(lambda)."""
    events = model.log_intensity_grad(theta_bar, path.events).reshape(-1, model.param_dim).sum(axis=0)
    return events - compensator(model, theta_bar, cfg=cfg)


@dataclass
class ScoreAccumulator:
    """Running score sum over correction paths for online one-step updates."""

    model: IntensityModel
    theta_bar: np.ndarray
    N: int
    cfg: QuadConfig = DEFAULT
    event_sum: np.ndarray = field(init=False)
    paths_seen: int = field(init=False, default=0)

    def __post_init__(self):
        self.theta_bar = self.model.theta(self.theta_bar)
        self.event_sum = np.zeros(self.model.param_dim)
        self._comp = compensator(self.model, self.theta_bar, cfg=self.cfg)
        self._finv, _ = fisher_inverse(self.model, self.theta_bar, self.cfg)

    def add(self, path: PoissonPath) -> np.ndarray:
        """Consume path ``k = N + paths_seen + 1`` and return the one-step estimate at that k."""
        ev = self.model.log_intensity_grad(self.theta_bar, path.events).reshape(-1, self.model.param_dim)
        self.event_sum = self.event_sum + ev.sum(axis=0)
        self.paths_seen += 1
        return self.estimate()

    @property
    def k(self) -> int:
        return self.N + self.paths_seen

    def estimate(self) -> np.ndarray:
        score = self.event_sum - self.paths_seen * self._comp
        return self.theta_bar + self._finv @ score / self.k


@dataclass
class EstimatorTrace:
    k_values: np.ndarray
    estimates: np.ndarray
    kind: str
    clipped: np.ndarray

    def __post_init__(self):
        if len(self.k_values) != len(self.estimates) or len(self.k_values) != len(self.clipped):
            raise ValueError("trace columns must have equal length")

    def at(self, k: int) -> np.ndarray:
        idx = np.searchsorted(self.k_values, k)
        if idx == len(self.k_values) or self.k_values[idx] != k:
            raise KeyError(f"k={k} not in trace")
        return self.estimates[idx]

    @property
    def final(self) -> np.ndarray:
        return self.estimates[-1]


def _k_grid(split: LearningSplit, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ks = np.arange(split.N + 1, split.n + 1, stride)
    if ks[-1] != split.n:
        ks = np.append(ks, split.n)
    return ks


def _check_sample(sample: Sample, split: LearningSplit) -> None:
    if sample.n != split.n:
        raise ValueError(f"sample has {sample.n} paths but the split was built for n={split.n}")


def _cumulative_event_scores(model, theta_bar, sample, split) -> np.ndarray:
    """E_k = sum_{j=N+1}^{k} event score of path j, rows k = N+1..n."""
    return np.cumsum(event_scores(model, theta_bar, sample.subset(split.N)), axis=0)


def one_step(
    model: IntensityModel, sample: Sample, theta_bar, split: LearningSplit, cfg: QuadConfig = DEFAULT
) -> np.ndarray:
    """theta_bar + I(theta_bar)^-1 (1/n) sum_{j=N+1}^{n} score_j(theta_bar).

    Computed as the k = n end of the one-step process so that both agree bit for bit.
    """
    return one_step_process(model, sample, theta_bar, split, stride=split.n, cfg=cfg).final


def one_step_process(
    model: IntensityModel,
    sample: Sample,
    theta_bar,
    split: LearningSplit,
    stride: int = 1,
    cfg: QuadConfig = DEFAULT,
) -> EstimatorTrace:
    """theta*_{k,n} for k = N+1..n (every ``stride``-th k, always including n)."""
    _check_sample(sample, split)
    theta_bar = model.theta(theta_bar)
    finv, _ = fisher_inverse(model, theta_bar, cfg)
    comp = compensator(model, theta_bar, cfg=cfg)
    cum = _cumulative_event_scores(model, theta_bar, sample, split)
    ks = _k_grid(split, stride)
    m = (ks - split.N)[:, None]
    scores = cum[ks - split.N - 1] - m * comp
    est = theta_bar + (scores @ finv.T) / ks[:, None]
    return EstimatorTrace(ks, est, "one_step_process", np.zeros(len(ks), dtype=bool))


def _stage_two_compensators(model, theta_bar, thetas, cfg, exact):
    """Integral of score(theta_bar, t) lambda(theta_k, t) for every row theta_k."""
    if exact:
        return np.array([compensator(model, theta_bar, th, cfg) for th in thetas])
    # one adaptive rule, refined on a stack of representative rows, reused for all rows
    bounds = np.array([model.bounds(th) for th in thetas] + [model.bounds(theta_bar)])
    lo, hi = bounds[:, 0].min(), bounds[:, 1].max()
    picks = {0, len(thetas) - 1}
    picks.update(int(i) for i in np.linspace(0, len(thetas) - 1, 9).round())
    picks.update(int(i) for i in np.argmin(thetas, axis=0))
    picks.update(int(i) for i in np.argmax(thetas, axis=0))
    probe = np.vstack([thetas[sorted(picks)], theta_bar[None, :]])

    def stacked(t):
        lam = model.intensity(probe, t)  # (P, Q)
        return (lam.T[:, :, None] * model.log_intensity_grad(theta_bar, t)[:, None, :]).reshape(len(t), -1)

    rule = integrate(stacked, lo, hi, cfg, points=model.breakpoints(theta_bar), full_output=True)
    weighted = model.log_intensity_grad(theta_bar, rule.nodes) * rule.weights[:, None]
    return model.intensity(thetas, rule.nodes) @ weighted


def two_step_process(
    model: IntensityModel,
    sample: Sample,
    theta_bar,
    split: LearningSplit,
    stride: int = 1,
    cfg: QuadConfig = DEFAULT,
    exact: bool = False,
) -> EstimatorTrace:
    """theta**_{k,n}: a second scoring step from the one-step process value.

    The event sums of both stages use the score at theta_bar; only the
    compensator moves to the first-stage value (clipped into the box).
    ``exact`` recomputes each compensator by its own adaptive quadrature
    instead of sharing one refined rule.
    """
    _check_sample(sample, split)
    theta_bar = model.theta(theta_bar)
    finv, _ = fisher_inverse(model, theta_bar, cfg)
    comp0 = compensator(model, theta_bar, cfg=cfg)
    cum = _cumulative_event_scores(model, theta_bar, sample, split)
    ks = _k_grid(split, stride)
    m = (ks - split.N)[:, None]
    events = cum[ks - split.N - 1]
    first = theta_bar + ((events - m * comp0) @ finv.T) / ks[:, None]

    lower = np.array(model.space.lower) + CLIP_MARGIN
    upper = np.array(model.space.upper) - CLIP_MARGIN
    first_in = np.clip(first, lower, upper)
    clipped = np.any(first_in != first, axis=1)
    comp_k = _stage_two_compensators(model, theta_bar, first_in, cfg, exact)
    second = first + ((events - m * comp_k) @ finv.T) / ks[:, None]
    return EstimatorTrace(ks, second, "two_step_process", clipped)


@dataclass
class PipelineResult:
    estimator: str
    theta: np.ndarray
    preliminary: np.ndarray
    theta_bar: np.ndarray
    split: LearningSplit
    trace: EstimatorTrace | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def learning_paths(self) -> range:
        return range(0, self.split.N)

    @property
    def correction_paths(self) -> range:
        return range(self.split.N, self.split.n)

    def to_json(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta": [float(v) for v in self.theta],
            "preliminary": [float(v) for v in self.preliminary],
            "N": self.split.N,
            "n": self.split.n,
            "delta": self.split.delta,
            "learning_paths": [self.learning_paths.start, self.learning_paths.stop],
            "correction_paths": [self.correction_paths.start, self.correction_paths.stop],
            "flags": list(self.flags),
        }


def estimate_pipeline(
    model: IntensityModel,
    sample: Sample,
    moments: MomentSpec | None = None,
    delta: float = 0.6,
    mode: str = "onestep",
    process: bool = False,
    stride: int = 1,
    cfg: QuadConfig = DEFAULT,
    exact: bool = False,
) -> PipelineResult:
    """Preliminary MME on paths 1..N, then the one- or two-step correction on N+1..n.

    ``process`` returns the full one-step trace for ``mode="onestep"``; the
    two-step estimator is always computed as a process (its final value is
    the k = n entry).
    """
    moments = moments or default_moments(model)
    split = learning_size(sample.n, delta, mode)
    prelim = mme_estimate(sample.subset(0, split.N), moments, model, cfg)
    theta_bar, was_clipped = model.space.clip(prelim.theta, CLIP_MARGIN)
    flags = ["preliminary_" + f for f in prelim.flags]
    if was_clipped:
        flags.append("preliminary_clipped")

    trace = None
    if mode == "onestep" and not process:
        theta = one_step(model, sample, theta_bar, split, cfg)
        name = "onestep"
    elif mode == "onestep":
        trace = one_step_process(model, sample, theta_bar, split, stride, cfg)
        theta, name = trace.final, "onestep_process"
    else:
        trace = two_step_process(model, sample, theta_bar, split, stride, cfg, exact)
        theta, name = trace.final, "twostep_process"
        if trace.clipped[-1]:
            flags.append("first_stage_clipped")
    if trace is not None and was_clipped:
        trace.clipped = np.ones_like(trace.clipped)
    if not model.space.contains(theta):
        flags.append("outside_box")
    return PipelineResult(name, theta, prelim.theta, theta_bar, split, trace, flags)
