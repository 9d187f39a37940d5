"""Digamma and trigamma by upward recurrence plus asymptotic series."""

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# Bernoulli-number coefficients B_2k / (2k) and B_2k for the two series.
_PSI_COEF = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
_TRI_COEF = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)

_SHIFT = 10.0


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0 (vectorised)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("digamma is only implemented for x > 0")
    acc = np.zeros_like(x)
    # psi(x) = psi(x + 1) - 1/x until x is large enough for the series.
    while True:
        small = x < _SHIFT
        if not np.any(small):
            break
        acc = acc - np.where(small, 1.0 / x, 0.0)
        x = np.where(small, x + 1.0, x)
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_PSI_COEF):
        series = (series + c) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out[()] if out.ndim == 0 else out


def trigamma(x):
    """psi'(x) for x > 0 (vectorised)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("trigamma is only implemented for x > 0")
    acc = np.zeros_like(x)
    while True:
        small = x < _SHIFT
        if not np.any(small):
            break
        acc = acc + np.where(small, 1.0 / (x * x), 0.0)
        x = np.where(small, x + 1.0, x)
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for c in reversed(_TRI_COEF):
        series = (series + c) * inv2
    out = acc + inv + 0.5 * inv2 + series * inv
    return out[()] if out.ndim == 0 else out
