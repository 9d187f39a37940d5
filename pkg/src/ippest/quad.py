"""Adaptive quadrature over the time domain and the integrals built on it.

Panels are integrated with a 15-point Gauss-Legendre rule on each half; the
difference between the whole-panel rule and the sum of the halves is the
error estimate.  Panels are bisected greedily (largest error first) until the
summed estimate meets ``max(abs_tol, rel_tol * |I|)`` in every component of a
vector-valued integrand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NonConvergence, SingularFisher, SingularJacobian

_X, _W = np.polynomial.legendre.leggauss(15)
_EPS = np.finfo(float).eps
# the halving estimate undershoots near algebraic endpoint singularities
_SAFETY = 10.0


@dataclass(frozen=True)
class QuadConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.max_subdivisions < 1:
            raise ValueError("quadrature tolerances must be positive and max_subdivisions >= 1")


DEFAULT = QuadConfig()


@dataclass
class QuadResult:
    value: np.ndarray
    error: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    panels: int

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Integrate tabulated values ``values[..., q]`` at :attr:`nodes` with the final rule."""
        return values @ self.weights


def _gauss(f, lo, hi):
    """15-point rule on each panel; returns (P, *shape) integrals and (P, *shape) abs-integrals."""
    half = 0.5 * (hi - lo)
    t = (0.5 * (hi + lo))[:, None] + half[:, None] * _X
    w = half[:, None] * _W
    vals = np.asarray(f(t.ravel()), dtype=float)
    vals = vals.reshape(t.shape + vals.shape[1:])
    wx = w.reshape(w.shape + (1,) * (vals.ndim - 2))
    return (wx * vals).sum(axis=1), (wx * np.abs(vals)).sum(axis=1), t, w


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    cfg: QuadConfig = DEFAULT,
    points: Sequence[float] = (),
    full_output: bool = False,
):
    """Integrate ``f`` over the finite interval [a, b].

    ``f`` maps a 1-d array of times to an array whose leading axis runs over
    those times (scalar or vector/matrix valued).  ``points`` are optional
    interior breakpoints.  Returns the integral, or a :class:`QuadResult`
    carrying the final composite rule when ``full_output`` is set.
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("integrate needs a finite interval; truncate infinite domains first")
    if a == b:
        raise ValueError("empty integration interval")
    edges = np.unique(np.concatenate([[a, b], [p for p in points if a < p < b]]))
    lo, hi = edges[:-1], edges[1:]
    coarse, _, _, _ = _gauss(f, lo, hi)

    # pool of panels; every panel carries its refined value, error and rule
    pool_lo = pool_hi = pool_val = pool_err = pool_t = pool_w = None
    while True:
        mid = 0.5 * (lo + hi)
        left, labs, lt, lw = _gauss(f, lo, mid)
        right, rabs, rt, rw = _gauss(f, mid, hi)
        val = left + right
        err = _SAFETY * np.abs(coarse - val)
        err = np.where(err <= 50 * _SAFETY * _EPS * (labs + rabs), 0.0, err)
        new = (lo, hi, val, err, np.concatenate([lt, rt], axis=1), np.concatenate([lw, rw], axis=1))
        if pool_lo is None:
            pool_lo, pool_hi, pool_val, pool_err, pool_t, pool_w = new
        else:
            pool_lo, pool_hi, pool_val, pool_err, pool_t, pool_w = (
                np.concatenate([old, fresh]) for old, fresh in zip(
                    (pool_lo, pool_hi, pool_val, pool_err, pool_t, pool_w), new)
            )

        tol = np.maximum(cfg.abs_tol, cfg.rel_tol * np.abs(pool_val.sum(axis=0)))
        scaled = (pool_err / tol).reshape(len(pool_err), -1).max(axis=1)
        if scaled.sum() <= 1.0:
            break
        if len(pool_lo) > cfg.max_subdivisions:
            raise NonConvergence(f"quadrature did not converge within {cfg.max_subdivisions} subdivisions")

        # split the largest-error panels until what stays behind fits half the budget
        order = np.argsort(-scaled, kind="stable")
        tail = np.cumsum(scaled[order][::-1])[::-1]
        n_split = max(1, int(np.sum(tail > 0.5)))
        split = np.zeros(len(scaled), dtype=bool)
        split[order[:n_split]] = True
        pmid = 0.5 * (pool_lo + pool_hi)
        # panels that can no longer be halved in floating point stay as they are
        split &= (pmid > pool_lo) & (pmid < pool_hi) & (scaled > 0)
        if not np.any(split):
            raise NonConvergence("quadrature error cannot be reduced further (non-integrable integrand?)")

        s_lo, s_mid, s_hi = pool_lo[split], pmid[split], pool_hi[split]
        keep = ~split
        lo = np.concatenate([s_lo, s_mid])
        hi = np.concatenate([s_mid, s_hi])
        coarse, _, _, _ = _gauss(f, lo, hi)
        pool_lo, pool_hi, pool_val, pool_err, pool_t, pool_w = (
            arr[keep] for arr in (pool_lo, pool_hi, pool_val, pool_err, pool_t, pool_w)
        )

    value = pool_val.sum(axis=0)
    if not full_output:
        return value[()] if np.ndim(value) == 0 else value
    nodes = pool_t.ravel()
    weights = pool_w.ravel()
    order = np.argsort(nodes, kind="stable")
    return QuadResult(value, pool_err.sum(axis=0), nodes[order], weights[order], len(pool_lo))


def integrate_model(model, theta, f, cfg: QuadConfig = DEFAULT, full_output: bool = False):
    """Integrate ``f`` over the model's (truncated) domain at parameter ``theta``."""
    lo, hi = model.bounds(theta)
    return integrate(f, lo, hi, cfg, points=model.breakpoints(theta), full_output=full_output)


def _moment_functions(moments) -> tuple:
    return tuple(getattr(moments, "g", moments))


def fisher_info(model, theta, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Per-path Fisher information: integral of grad(lambda) grad(lambda)^T / lambda."""
    theta = model.theta(theta)

    def integrand(t):
        score = model.log_intensity_grad(theta, t)
        return model.intensity(theta, t)[:, None, None] * score[:, :, None] * score[:, None, :]

    info = integrate_model(model, theta, integrand, cfg)
    info = np.atleast_2d(0.5 * (info + info.T))
    smallest = np.linalg.eigvalsh(info)[0]
    if smallest < 1e-10:
        raise SingularFisher(f"Fisher information is degenerate at theta={theta.tolist()} (min eigenvalue {smallest:.3g})")
    return info


def moment_map(model, theta, moments, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Expected moment vector: integral of g(t) lambda(theta, t)."""
    theta = model.theta(theta)
    g = _moment_functions(moments)

    def integrand(t):
        return np.stack([gl(t) for gl in g], axis=-1) * model.intensity(theta, t)[:, None]

    return np.atleast_1d(integrate_model(model, theta, integrand, cfg))


def moment_jacobian(model, theta, moments, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Matrix of partials dM_l / dtheta_k = integral of g_l grad_k(lambda)."""
    theta = model.theta(theta)
    g = _moment_functions(moments)

    def integrand(t):
        G = np.stack([gl(t) for gl in g], axis=-1)
        return G[:, :, None] * model.intensity_grad(theta, t)[:, None, :]

    jac = np.atleast_2d(integrate_model(model, theta, integrand, cfg))
    if not np.all(np.isfinite(jac)) or abs(np.linalg.det(jac)) < 1e-14 * max(1.0, np.abs(jac).max()) ** len(jac):
        raise SingularJacobian(f"moment map is not locally invertible at theta={theta.tolist()}")
    return jac


def g_matrix(model, theta, moments, cfg: QuadConfig = DEFAULT) -> np.ndarray:
    """Covariance of the per-path moment integrals: integral of g g^T lambda."""
    theta = model.theta(theta)
    g = _moment_functions(moments)

    def integrand(t):
        G = np.stack([gl(t) for gl in g], axis=-1)
        return G[:, :, None] * G[:, None, :] * model.intensity(theta, t)[:, None, None]

    out = np.atleast_2d(integrate_model(model, theta, integrand, cfg))
    return 0.5 * (out + out.T)
