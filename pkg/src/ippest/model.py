"""Parametric intensity families for inhomogeneous Poisson processes.

All methods are vectorised over time.  ``theta`` is a 1-d parameter vector;
``intensity`` additionally accepts a 2-d ``(K, d)`` stack of parameters and
then returns a ``(K, Q)`` array for a 1-d time grid of length ``Q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, NonPositiveIntensity
from .specfun import digamma

TWO_PI = 2.0 * math.pi

# Tail mass left out when an infinite domain is truncated.  The Gamma horizon
# is solved with four extra shape units so that t**4-weighted moments are
# also negligible beyond it.
TAIL_MASS = 1e-14
GAUSS_HALF_WIDTH = 8.0


@dataclass(frozen=True)
class TimeDomain:
    kind: str = "interval"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind == "interval":
            if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
                raise ConfigError(f"interval domain needs finite a < b, got [{self.a}, {self.b}]")
        elif self.kind == "half_line":
            object.__setattr__(self, "a", 0.0)
            object.__setattr__(self, "b", math.inf)
        elif self.kind == "real_line":
            object.__setattr__(self, "a", -math.inf)
            object.__setattr__(self, "b", math.inf)
        else:
            raise ConfigError(f"unknown domain kind {self.kind!r}")

    @property
    def finite(self) -> bool:
        return self.kind == "interval"

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.a) & (t <= self.b)

    def to_config(self) -> dict:
        if self.kind == "interval":
            return {"kind": "interval", "a": self.a, "b": self.b}
        return {"kind": self.kind}

    @classmethod
    def from_config(cls, cfg: dict) -> TimeDomain:
        cfg = dict(cfg)
        _reject_unknown(cfg, {"kind", "a", "b"}, "domain")
        return cls(cfg.get("kind", "interval"), float(cfg.get("a", 0.0)), float(cfg.get("b", 1.0)))


@dataclass(frozen=True)
class ParamSpace:
    """Open axis-aligned box standing in for the parameter set."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ConfigError("parameter bounds must be non-empty and of equal length")
        if any(not (l < h) for l, h in zip(lo, hi)):
            raise ConfigError(f"parameter bounds need lower < upper, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))

    def clip(self, theta, margin: float = 1e-6) -> tuple[np.ndarray, bool]:
        """Project onto the box shrunk by ``margin``; report whether anything moved."""
        theta = np.asarray(theta, dtype=float)
        clipped = np.clip(theta, np.array(self.lower) + margin, np.array(self.upper) - margin)
        return clipped, bool(np.any(clipped != theta))

    def grid(self, points: int) -> np.ndarray:
        """Cell-centred tensor grid with ``points`` values per axis, shape ``(points**d, d)``."""
        axes = [lo + (np.arange(points) + 0.5) * (hi - lo) / points for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


@dataclass(frozen=True)
class Basis:
    """Elementary time function: ``t**k``, ``cos(2 pi k t)`` or ``sin(2 pi k t)``.

    Written as ``"poly:k"``, ``"cos:k"`` or ``"sin:k"`` in configuration files.
    """

    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in ("poly", "cos", "sin") or self.k < 0:
            raise ConfigError(f"bad basis function {self.kind}:{self.k}")

    @classmethod
    def parse(cls, text: str) -> Basis:
        try:
            kind, k = str(text).split(":")
            return cls(kind.strip(), int(k))
        except ValueError:
            raise ConfigError(f"cannot parse basis function {text!r} (expected e.g. 'poly:1', 'cos:2')") from None

    def __str__(self) -> str:
        return f"{self.kind}:{self.k}"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            return t**self.k if self.k else np.ones_like(t)
        if self.kind == "cos":
            return np.cos(TWO_PI * self.k * t)
        return np.sin(TWO_PI * self.k * t)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        w = TWO_PI * self.k
        if self.kind == "poly":
            return t ** (self.k + 1) / (self.k + 1)
        if self.kind == "cos":
            return np.sin(w * t) / w if self.k else t
        return -np.cos(w * t) / w if self.k else np.zeros_like(t)


def _reject_unknown(cfg: dict, allowed: set, where: str) -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")


def _as_theta(theta, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1)
    if theta.shape[-1] != d or theta.ndim > 2:
        raise ValueError(f"expected parameter vector of dimension {d}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise NonPositiveIntensity(f"non-finite parameter {theta}")
    return theta


def _columns(theta: np.ndarray):
    """Split parameters into components that broadcast against a 1-d time grid."""
    if theta.ndim == 2:
        return [theta[:, i, None] for i in range(theta.shape[1])]
    return [theta[i] for i in range(theta.shape[0])]


@dataclass(frozen=True)
class IntensityModel:
    """Base class; subclasses implement a concrete family."""

    family: ClassVar[str]
    param_names: ClassVar[tuple[str, ...]]
    normalized: ClassVar[bool] = False
    preferred_sampler: ClassVar[str] = "thinning"

    space: ParamSpace
    domain: TimeDomain

    @property
    def param_dim(self) -> int:
        return self.space.dim

    def theta(self, theta) -> np.ndarray:
        th = _as_theta(theta, self.param_dim)
        self.check_theta(th)
        return th

    def check_theta(self, theta: np.ndarray) -> None:
        pass

    def intensity(self, theta, t):
        raise NotImplementedError

    def intensity_grad(self, theta, t):
        """Partial derivatives in theta, shape ``t.shape + (d,)``."""
        raise NotImplementedError

    def log_intensity_grad(self, theta, t):
        t = np.asarray(t, dtype=float)
        return self.intensity_grad(theta, t) / self.intensity(theta, t)[..., None]

    def cumulative_intensity(self, theta, t):
        raise NotImplementedError

    def bounds(self, theta) -> tuple[float, float]:
        """Finite integration window; equals the domain when it is finite."""
        return self.domain.a, self.domain.b

    def breakpoints(self, theta) -> list[float]:
        return []

    def total_mass(self, theta) -> float:
        lo, hi = self.bounds(theta)
        return float(self.cumulative_intensity(theta, hi))

    def bounded(self, theta) -> bool:
        """Whether sup_t intensity is finite, i.e. thinning is possible."""
        return True

    def sample_times(self, theta, rng: np.random.Generator, size: int) -> np.ndarray | None:
        """Draw ``size`` i.i.d. times with density intensity / total mass, if a direct sampler exists."""
        return None

    def to_config(self, theta=None) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearBasis(IntensityModel):
    """``sum_l theta_l h_l(t) + lambda0`` on a finite interval."""

    family: ClassVar[str] = "linear"
    param_names: ClassVar[tuple[str, ...]] = ("theta",)

    basis: tuple[Basis, ...] = ()
    lambda0: float = 0.0

    def __post_init__(self):
        if not self.domain.finite:
            raise ConfigError("linear family needs a finite interval domain")
        if len(self.basis) != self.space.dim:
            raise ConfigError(f"{len(self.basis)} basis functions but parameter box of dimension {self.space.dim}")
        if self.lambda0 < 0:
            raise ConfigError("lambda0 must be >= 0")

    def design(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([h(t) for h in self.basis], axis=-1)

    def intensity(self, theta, t):
        theta = _as_theta(theta, self.param_dim)
        H = self.design(t)
        lam = (theta @ np.moveaxis(H, -1, 0) if theta.ndim == 2 else H @ theta) + self.lambda0
        if np.any(lam <= 0):
            raise NonPositiveIntensity(f"intensity <= 0 for theta={theta.tolist()}")
        return lam

    def intensity_grad(self, theta, t):
        _as_theta(theta, self.param_dim)
        return self.design(t)

    def cumulative_intensity(self, theta, t):
        theta = _as_theta(theta, self.param_dim)
        t = np.asarray(t, dtype=float)
        a = self.domain.a
        F = np.stack([h.antiderivative(t) - h.antiderivative(a) for h in self.basis], axis=-1)
        return F @ theta + self.lambda0 * (t - a)

    def to_config(self, theta=None) -> dict:
        cfg = {
            "family": self.family,
            "lambda0": self.lambda0,
            "basis": [str(h) for h in self.basis],
            "domain": self.domain.to_config(),
            "bounds": {"lower": list(self.space.lower), "upper": list(self.space.upper)},
        }
        if theta is not None:
            cfg["theta"] = [float(v) for v in np.atleast_1d(theta)]
        return cfg


@dataclass(frozen=True)
class GammaShapeRate(IntensityModel):
    """Gamma density ``t**(beta-1) alpha**beta exp(-alpha t) / Gamma(beta)`` on [0, inf)."""

    family: ClassVar[str] = "gamma"
    param_names: ClassVar[tuple[str, ...]] = ("alpha", "beta")
    normalized: ClassVar[bool] = True
    preferred_sampler: ClassVar[str] = "density"

    def __post_init__(self):
        if self.domain.kind != "half_line" or self.space.dim != 2:
            raise ConfigError("gamma family lives on the half line with parameters (alpha, beta)")

    def check_theta(self, theta):
        if np.any(theta <= 0):
            raise NonPositiveIntensity(f"gamma parameters must be positive, got {theta.tolist()}")

    def _log_intensity(self, alpha, beta, t):
        return (beta - 1.0) * np.log(t) + beta * np.log(alpha) - special.gammaln(beta) - alpha * t

    def intensity(self, theta, t):
        theta = self.theta(theta)
        alpha, beta = _columns(theta)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("gamma intensity is defined for t >= 0")
        if np.any(t == 0):
            if np.any(theta[..., 1] != 1.0):
                raise DomainError("gamma intensity at t=0 is 0 or infinite unless beta == 1")
            t = np.where(t == 0, np.finfo(float).tiny, t)  # limit at the origin is alpha
            return np.exp(np.log(alpha) - alpha * t) * np.ones_like(t)
        return np.exp(self._log_intensity(alpha, beta, t))

    def log_intensity_grad(self, theta, t):
        alpha, beta = self.theta(theta)
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("gamma score has a log singularity at t=0")
        return np.stack([beta / alpha - t, np.log(alpha * t) - digamma(beta)], axis=-1)

    def intensity_grad(self, theta, t):
        return self.log_intensity_grad(theta, t) * self.intensity(theta, t)[..., None]

    def cumulative_intensity(self, theta, t):
        alpha, beta = self.theta(theta)
        t = np.asarray(t, dtype=float)
        return special.gammainc(beta, alpha * np.maximum(t, 0.0))

    def bounds(self, theta):
        alpha, beta = self.theta(theta)
        return 0.0, float(special.gammainccinv(beta + 4.0, TAIL_MASS) / alpha)

    def breakpoints(self, theta):
        alpha, beta = self.theta(theta)
        return [float(beta / alpha)]

    def total_mass(self, theta):
        self.theta(theta)
        return 1.0

    def bounded(self, theta):
        return bool(self.theta(theta)[1] >= 1.0)

    def sample_times(self, theta, rng, size):
        alpha, beta = self.theta(theta)
        return rng.gamma(beta, 1.0 / alpha, size=size)

    def to_config(self, theta=None) -> dict:
        cfg = {"family": self.family, "bounds": {"lower": list(self.space.lower), "upper": list(self.space.upper)}}
        if theta is not None:
            cfg["alpha"], cfg["beta"] = (float(v) for v in theta)
        return cfg


@dataclass(frozen=True)
class GaussianBell(IntensityModel):
    """Normal density with mean ``alpha`` and variance ``sigma2`` on the real line."""

    family: ClassVar[str] = "gaussian"
    param_names: ClassVar[tuple[str, ...]] = ("alpha", "sigma2")
    normalized: ClassVar[bool] = True
    preferred_sampler: ClassVar[str] = "density"

    def __post_init__(self):
        if self.domain.kind != "real_line" or self.space.dim != 2:
            raise ConfigError("gaussian family lives on the real line with parameters (alpha, sigma2)")

    def check_theta(self, theta):
        if np.any(theta[..., 1] <= 0):
            raise NonPositiveIntensity(f"sigma2 must be positive, got {theta.tolist()}")

    def intensity(self, theta, t):
        alpha, s2 = _columns(self.theta(theta))
        t = np.asarray(t, dtype=float)
        return np.exp(-((t - alpha) ** 2) / (2.0 * s2)) / np.sqrt(TWO_PI * s2)

    def log_intensity_grad(self, theta, t):
        alpha, s2 = self.theta(theta)
        u = np.asarray(t, dtype=float) - alpha
        return np.stack([u / s2, (u * u / s2 - 1.0) / (2.0 * s2)], axis=-1)

    def intensity_grad(self, theta, t):
        return self.log_intensity_grad(theta, t) * self.intensity(theta, t)[..., None]

    def cumulative_intensity(self, theta, t):
        alpha, s2 = self.theta(theta)
        return special.ndtr((np.asarray(t, dtype=float) - alpha) / math.sqrt(s2))

    def bounds(self, theta):
        alpha, s2 = self.theta(theta)
        half = GAUSS_HALF_WIDTH * math.sqrt(s2)
        return float(alpha - half), float(alpha + half)

    def breakpoints(self, theta):
        return [float(self.theta(theta)[0])]

    def total_mass(self, theta):
        self.theta(theta)
        return 1.0

    def sample_times(self, theta, rng, size):
        alpha, s2 = self.theta(theta)
        return rng.normal(alpha, math.sqrt(s2), size=size)

    def to_config(self, theta=None) -> dict:
        cfg = {"family": self.family, "bounds": {"lower": list(self.space.lower), "upper": list(self.space.upper)}}
        if theta is not None:
            cfg["alpha"], cfg["sigma2"] = (float(v) for v in theta)
        return cfg


@dataclass(frozen=True)
class SinePhase(IntensityModel):
    """``A sin(2 pi t + theta) + lambda0`` on [0, 1] with unknown phase.

    The baseline enters with a plus sign: with ``A < lambda0`` this keeps the
    intensity positive for every phase.
    """

    family: ClassVar[str] = "sine"
    param_names: ClassVar[tuple[str, ...]] = ("theta",)

    A: float = 1.0
    lambda0: float = 2.0

    def __post_init__(self):
        if self.domain != TimeDomain("interval", 0.0, 1.0) or self.space.dim != 1:
            raise ConfigError("sine family lives on [0, 1] with a scalar phase")
        if not (0.0 <= self.A < self.lambda0):
            raise ConfigError(f"sine family needs 0 <= A < lambda0, got A={self.A}, lambda0={self.lambda0}")

    def intensity(self, theta, t):
        (phase,) = _columns(_as_theta(theta, 1))
        return self.A * np.sin(TWO_PI * np.asarray(t, dtype=float) + phase) + self.lambda0

    def intensity_grad(self, theta, t):
        (phase,) = _as_theta(theta, 1)
        return (self.A * np.cos(TWO_PI * np.asarray(t, dtype=float) + phase))[..., None]

    def cumulative_intensity(self, theta, t):
        (phase,) = _as_theta(theta, 1)
        t = np.asarray(t, dtype=float)
        return self.lambda0 * t + self.A * (math.cos(phase) - np.cos(TWO_PI * t + phase)) / TWO_PI

    def to_config(self, theta=None) -> dict:
        cfg = {
            "family": self.family,
            "A": self.A,
            "lambda0": self.lambda0,
            "bounds": {"lower": list(self.space.lower), "upper": list(self.space.upper)},
        }
        if theta is not None:
            cfg["theta"] = float(np.atleast_1d(theta)[0])
        return cfg


FAMILIES: dict[str, type[IntensityModel]] = {
    cls.family: cls for cls in (LinearBasis, GammaShapeRate, GaussianBell, SinePhase)
}

DEFAULT_BOUNDS = {
    "gamma": ((0.2, 0.2), (10.0, 10.0)),
    "gaussian": ((-10.0, 0.05), (10.0, 25.0)),
    "sine": ((0.2,), (2.9,)),
}

_FIXED_DOMAIN = {
    "gamma": TimeDomain("half_line"),
    "gaussian": TimeDomain("real_line"),
    "sine": TimeDomain("interval", 0.0, 1.0),
}

_FIELDS = {
    "linear": {"lambda0", "basis", "theta"},
    "gamma": {"alpha", "beta"},
    "gaussian": {"alpha", "sigma2"},
    "sine": {"A", "lambda0", "theta"},
}


@dataclass
class ModelConfig:
    """A parsed model section: the family plus optional parameter values."""

    model: IntensityModel
    theta: np.ndarray | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def model_from_config(cfg: dict) -> ModelConfig:
    """Build a model from its JSON configuration object.

    Recognised fields per family (``bounds`` and ``domain`` are accepted by all):

    * ``linear``: ``lambda0``, ``basis`` (list such as ``["poly:0", "cos:1"]``), ``theta``
    * ``gamma``: ``alpha``, ``beta``
    * ``gaussian``: ``alpha``, ``sigma2``
    * ``sine``: ``A``, ``lambda0``, ``theta``

    Unknown fields raise :class:`ConfigError`.
    """
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise ConfigError("model configuration must be an object with a 'family' field")
    family = cfg["family"]
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    _reject_unknown(cfg, {"family", "bounds", "domain"} | _FIELDS[family], f"{family} model")

    if "domain" in cfg:
        domain = TimeDomain.from_config(cfg["domain"])
    elif family in _FIXED_DOMAIN:
        domain = _FIXED_DOMAIN[family]
    else:
        domain = TimeDomain("interval", 0.0, 1.0)

    try:
        if family == "linear":
            basis = tuple(Basis.parse(b) for b in cfg.get("basis", ["poly:0"]))
            d = len(basis)
        else:
            d = len(DEFAULT_BOUNDS[family][0])
        if "bounds" in cfg:
            b = cfg["bounds"]
            _reject_unknown(b, {"lower", "upper"}, "bounds")
            space = ParamSpace(tuple(b["lower"]), tuple(b["upper"]))
        elif family == "linear":
            space = ParamSpace((0.0,) * d, (10.0,) * d)
        else:
            space = ParamSpace(*DEFAULT_BOUNDS[family])

        theta = None
        if family == "linear":
            model = LinearBasis(space, domain, basis=basis, lambda0=float(cfg.get("lambda0", 0.0)))
            if "theta" in cfg:
                theta = np.atleast_1d(np.asarray(cfg["theta"], dtype=float))
        elif family == "sine":
            model = SinePhase(space, domain, A=float(cfg.get("A", 1.0)), lambda0=float(cfg.get("lambda0", 2.0)))
            if "theta" in cfg:
                theta = np.atleast_1d(np.asarray(cfg["theta"], dtype=float))
        else:
            model = FAMILIES[family](space, domain)
            names = model.param_names
            given = [n for n in names if n in cfg]
            if given and len(given) != len(names):
                raise ConfigError(f"{family} model needs all of {names} or none")
            if given:
                theta = np.array([float(cfg[n]) for n in names])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {family} model configuration: {exc}") from None

    if theta is not None:
        if theta.shape != (model.param_dim,):
            raise ConfigError(f"theta has {theta.size} entries, model expects {model.param_dim}")
        if model.family in ("gamma", "gaussian"):
            model.theta(theta)
    return ModelConfig(model, theta)
