"""Laplace, spherical Gaussian and Report Noisy Max mechanisms.

Every draw consumes randomness even in noiseless debug mode, so a
noiseless run and a noisy run with the same handle stay aligned.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from dpht.core import RngHandle

_TINY = 2.0**-54


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    b = sensitivity / epsilon
    if not (b > 0 and math.isfinite(b)):
        raise ValueError(f"Laplace scale must be positive, got {b}")
    return b


def gaussian_sigma(l2_sensitivity: float, epsilon: float, delta: float) -> float:
    """sigma = Delta_2 * sqrt(2 ln(5 / (4 delta))) / epsilon."""
    if not (0 < delta < 1):
        raise ValueError("Gaussian mechanism needs delta in (0, 1)")
    s = l2_sensitivity * math.sqrt(2.0 * math.log(5.0 / (4.0 * delta))) / epsilon
    if not (s > 0 and math.isfinite(s)):
        raise ValueError(f"sigma must be positive, got {s}")
    return s


def _laplace_from_uniform(u, b):
    u = np.asarray(u) + _TINY
    lo = u < 0.5
    # np.where evaluates both branches; clip keeps the unused one finite
    return np.where(lo, b * np.log(2.0 * np.minimum(u, 0.5)),
                    -b * np.log(2.0 * np.maximum(1.0 - u, _TINY)))


def laplace_draw(scale: float, rng: RngHandle, noiseless: bool = False) -> float:
    """One Laplace(0, scale) draw by inverse CDF from a single uniform."""
    if not scale > 0:
        raise ValueError("Laplace scale must be positive")
    z = float(_laplace_from_uniform(rng.gen.random(), scale))
    return 0.0 if noiseless else z


def laplace_array(scale: float, size, rng: RngHandle, noiseless: bool = False) -> np.ndarray:
    if not scale > 0:
        raise ValueError("Laplace scale must be positive")
    z = _laplace_from_uniform(rng.gen.random(size), scale)
    return np.zeros_like(z) if noiseless else z


def gaussian_vector_draw(sigma: float, d: int, rng: RngHandle, noiseless: bool = False) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    z = sigma * rng.gen.standard_normal(d)
    return np.zeros(d) if noiseless else z


def noisy_argmax(values, noise) -> Tuple[int, float]:
    noisy = np.asarray(values, dtype=float) + np.asarray(noise, dtype=float)
    i = int(np.argmax(noisy))  # first maximiser, so ties go to the lowest index
    return i, float(noisy[i])


def report_noisy_max(values, sensitivity: float, epsilon: float, rng: RngHandle,
                     noiseless: bool = False) -> Tuple[int, float]:
    """Add Laplace(sensitivity/epsilon) to every entry; return (argmax, noisy value).

    Only the index carries the epsilon-DP guarantee. The returned noisy
    value is a by-product and is not separately private.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("report_noisy_max needs at least one value")
    if not (sensitivity > 0 and epsilon > 0):
        raise ValueError("sensitivity and epsilon must be positive")
    noise = laplace_array(sensitivity / epsilon, values.size, rng, noiseless)
    return noisy_argmax(values, noise)
