"""Method-of-moments estimation for Poisson paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    ConfigError,
    DegenerateMoments,
    EstimationError,
    NoSolution,
    OutOfRange,
    SingularJacobian,
)
from .model import Basis, GammaShapeRate, GaussianBell, IntensityModel, LinearBasis, SinePhase
from .quad import DEFAULT, QuadConfig, g_matrix, integrate, moment_jacobian, moment_map

INVERSIONS = ("linear", "gamma", "gaussian", "sine", "numeric")

_POLY12 = (Basis("poly", 1), Basis("poly", 2))
_SINE_G = (Basis("sin", 1), Basis("cos", 1))

# clamp for the arc-inverse argument; values further than ARC_SLACK outside [-1, 1] are errors
ARC_CLAMP = 1e-12
ARC_SLACK = 1e-3


@dataclass(frozen=True)
class MomentSpec:
    """Moment functions ``g`` plus the name of the inversion used to solve M(theta) = a."""

    g: tuple[Basis, ...]
    inversion: str = "numeric"

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(b if isinstance(b, Basis) else Basis.parse(b) for b in self.g))
        if self.inversion not in INVERSIONS:
            raise ConfigError(f"unknown inversion {self.inversion!r}; choose from {INVERSIONS}")

    @property
    def dim(self) -> int:
        return len(self.g)

    def check(self, model: IntensityModel) -> None:
        """Raise ConfigError if this spec cannot be used with ``model``."""
        if self.dim != model.param_dim:
            raise ConfigError(f"{self.dim} moment functions for a {model.param_dim}-parameter model")
        inv = self.inversion
        if inv == "numeric":
            return
        wanted = {"linear": LinearBasis, "gamma": GammaShapeRate, "gaussian": GaussianBell, "sine": SinePhase}[inv]
        if not isinstance(model, wanted):
            raise ConfigError(f"{inv} inversion does not apply to the {model.family} family")
        if inv in ("gamma", "gaussian") and self.g != _POLY12:
            raise ConfigError(f"{inv} inversion needs g = (poly:1, poly:2)")
        if inv == "sine" and self.g[0] not in _SINE_G:
            raise ConfigError("sine inversion needs g = sin:1 or cos:1")

    def to_config(self) -> dict:
        return {"g": [str(b) for b in self.g], "inversion": self.inversion}

    @classmethod
    def from_config(cls, cfg: dict) -> MomentSpec:
        unknown = set(cfg) - {"g", "inversion"}
        if unknown:
            raise ConfigError(f"unknown field(s) in moments: {sorted(unknown)}")
        if "g" not in cfg:
            raise ConfigError("moments section needs a 'g' list")
        return cls(tuple(cfg["g"]), cfg.get("inversion", "numeric"))


def default_moments(model: IntensityModel) -> MomentSpec:
    """Shipped moment functions per family.

    Linear models reuse their basis functions, Gamma and Gaussian use the
    first two raw moments, and the phase model uses ``sin(2 pi t)`` whose
    moment ``(A/2) cos(theta)`` is monotone on (0, pi).
    """
    if isinstance(model, LinearBasis):
        return MomentSpec(model.basis, "linear")
    if isinstance(model, GammaShapeRate):
        return MomentSpec(_POLY12, "gamma")
    if isinstance(model, GaussianBell):
        return MomentSpec(_POLY12, "gaussian")
    if isinstance(model, SinePhase):
        return MomentSpec((Basis("sin", 1),), "sine")
    raise ConfigError(f"no default moments for {model.family}")


@dataclass(frozen=True)
class EmpiricalMoments:
    a: np.ndarray
    n: int


@dataclass
class Estimate:
    theta: np.ndarray
    flags: list[str] = field(default_factory=list)


def empirical_moments(sample, moments: MomentSpec) -> EmpiricalMoments:
    """Average over paths of the counting-measure integrals sum_i g(t_i)."""
    times = sample.times
    a = np.array([gl(times).sum() for gl in moments.g]) / sample.n
    return EmpiricalMoments(a, sample.n)


@lru_cache(maxsize=64)
def _linear_system(model: LinearBasis, g: tuple[Basis, ...], cfg: QuadConfig):
    a, b = model.domain.a, model.domain.b

    def integrand(t):
        G = np.stack([gk(t) for gk in g], axis=-1)
        H = model.design(t)
        return np.concatenate([(G[:, :, None] * H[:, None, :]).reshape(len(t), -1), G], axis=1)

    out = integrate(integrand, a, b, cfg)
    d = len(g)
    return out[: d * d].reshape(d, d), out[d * d :]


def linear_system(model: LinearBasis, moments: MomentSpec, cfg: QuadConfig = DEFAULT):
    """Matrix ``A_kl = int g_k h_l`` and vector ``G_k = int g_k`` of the linear family."""
    return _linear_system(model, moments.g, cfg)


def _arc_argument(x: float) -> float:
    if not math.isfinite(x) or abs(x) > 1.0 + ARC_SLACK:
        raise OutOfRange(f"arc-inverse argument {x:.6g} outside [-1, 1]")
    return min(max(x, -1.0 + ARC_CLAMP), 1.0 - ARC_CLAMP)


def invert_moments(a, moments: MomentSpec, model: IntensityModel, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Solve M(theta) = a for theta."""
    a = np.atleast_1d(np.asarray(getattr(a, "a", a), dtype=float))
    moments.check(model)
    inv = moments.inversion
    if inv == "linear":
        A, G = linear_system(model, moments, cfg)
        try:
            return np.linalg.solve(A, a - model.lambda0 * G)
        except np.linalg.LinAlgError:
            raise SingularJacobian("moment matrix A is singular") from None
    if inv in ("gamma", "gaussian"):
        spread = a[1] - a[0] ** 2
        if not spread > 0:
            raise DegenerateMoments(f"a2 - a1^2 = {spread:.6g} is not positive")
        if inv == "gamma":
            return np.array([a[0] / spread, a[0] ** 2 / spread])
        return np.array([a[0], spread])
    if inv == "sine":
        if model.A == 0:
            raise DegenerateMoments("amplitude A = 0: the phase does not enter the moments")
        x = _arc_argument(2.0 * a[0] / model.A)
        if moments.g[0].kind == "sin":
            return np.array([math.acos(x)])
        return np.array([math.asin(x)])
    return _invert_numeric(a, moments, model, cfg)


def _residual(model, theta, moments, a, cfg):
    return moment_map(model, theta, moments, cfg) - a


def _newton(theta, a, moments, model, cfg, max_iter=60):
    space = model.space
    try:
        r = _residual(model, theta, moments, a, cfg)
    except EstimationError:
        return theta, math.inf
    norm = np.linalg.norm(r)
    for _ in range(max_iter):
        if norm < 1e-14 * (1.0 + np.linalg.norm(a)):
            break
        try:
            step = np.linalg.solve(moment_jacobian(model, theta, moments, cfg), r)
        except (np.linalg.LinAlgError, SingularJacobian):
            break
        damping = 1.0
        improved = False
        for _ in range(40):
            trial = theta - damping * step
            if space.contains(trial):
                try:
                    r_trial = _residual(model, trial, moments, a, cfg)
                except EstimationError:
                    r_trial = None
                if r_trial is not None and np.linalg.norm(r_trial) < norm:
                    improved = True
                    break
            damping *= 0.5
        if not improved:
            break
        moved = np.linalg.norm(trial - theta)
        theta, r, norm = trial, r_trial, np.linalg.norm(r_trial)
        if moved < 1e-15 * (1.0 + np.linalg.norm(theta)):
            break
    return theta, norm


def _invert_numeric(a, moments, model, cfg, tol=1e-8, grid_points=21):
    theta, norm = _newton(model.space.center, a, moments, model, cfg)
    if norm < tol:
        return theta
    # fallback: best point of a coarse grid over the box, then Newton again
    best, best_norm = None, math.inf
    for point in model.space.grid(grid_points):
        try:
            rn = np.linalg.norm(_residual(model, point, moments, a, cfg))
        except EstimationError:
            continue
        if rn < best_norm:
            best, best_norm = point, rn
    if best is not None:
        theta, norm = _newton(best, a, moments, model, cfg)
        if norm < tol:
            return theta
    raise NoSolution(f"no theta inside the parameter box with |M(theta) - a| < {tol:g} (best {min(norm, best_norm):.3g})")


def mme_estimate(sample, moments: MomentSpec, model: IntensityModel, cfg: QuadConfig = DEFAULT) -> Estimate:
    """theta* = H(a_n); flagged, not clipped, when it falls outside the parameter box."""
    theta = invert_moments(empirical_moments(sample, moments), moments, model, cfg)
    flags = [] if model.space.contains(theta) else ["outside_box"]
    return Estimate(theta, flags)


def mme_covariance(model: IntensityModel, theta, moments: MomentSpec, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Asymptotic covariance of sqrt(n)(theta* - theta): J^-1 G J^-T with J = dM/dtheta."""
    J = moment_jacobian(model, theta, moments, cfg)
    G = g_matrix(model, theta, moments, cfg)
    dH = np.linalg.inv(J)
    D = dH @ G @ dH.T
    return 0.5 * (D + D.T)


@dataclass
class IdentifiabilityReport:
    separation: dict[float, float]
    flagged: dict[float, bool]
    grid_size: int

    @property
    def ok(self) -> bool:
        return not any(self.flagged.values())


def check_identifiability(
    model: IntensityModel,
    moments: MomentSpec,
    param_grid=None,
    nus=(0.1, 0.25),
    threshold: float = 1e-6,
    cfg: QuadConfig = DEFAULT,
) -> IdentifiabilityReport:
    """Smallest moment separation |M(theta) - M(theta')| over grid pairs further apart than nu."""
    if param_grid is None:
        param_grid = model.space.grid(41 if model.param_dim == 1 else 11)
    grid = np.atleast_2d(np.asarray(param_grid, dtype=float))
    if grid.shape[1] != model.param_dim:
        grid = grid.reshape(-1, model.param_dim)
    M = np.array([moment_map(model, th, moments, cfg) for th in grid])
    dtheta = np.linalg.norm(grid[:, None, :] - grid[None, :, :], axis=-1)
    dM = np.linalg.norm(M[:, None, :] - M[None, :, :], axis=-1)
    separation, flagged = {}, {}
    for nu in nus:
        far = dtheta > nu
        sep = float(dM[far].min()) if np.any(far) else math.inf
        separation[nu] = sep
        flagged[nu] = sep < threshold
    return IdentifiabilityReport(separation, flagged, len(grid))

