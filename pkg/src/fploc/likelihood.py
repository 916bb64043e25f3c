"""Truncated, discretised Gaussian likelihood of integer-dBm observations.

Stored reference values are integers in [-99, 0] dBm, so an observation v
is modelled as the Gaussian mass of the bin [v - 0.5, v + 0.5] around the
reference value, renormalised over the representable range.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

RANGE_LO = -99.0
RANGE_HI = 0.0

#: floor keeping log-likelihoods finite for measurable features
_MASS_FLOOR = 1e-300


def discrete_gaussian_mass(v, mu: np.ndarray, sigma: float) -> np.ndarray:
    """P(bin of v | mu, sigma), truncated to the valid dBm range.

    ``v`` and ``mu`` broadcast against each other, so whole observation
    matrices can be scored in one call.
    """
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    upper = ndtr((v + 0.5 - mu) / sigma)
    lower = ndtr((v - 0.5 - mu) / sigma)
    norm = ndtr((RANGE_HI + 0.5 - mu) / sigma) - ndtr((RANGE_LO - 0.5 - mu) / sigma)
    with np.errstate(invalid="ignore", divide="ignore"):
        mass = np.where(norm > 0, (upper - lower) / norm, 0.0)
    return np.maximum(mass, 0.0)


def log_discrete_gaussian(v, mu: np.ndarray, sigma: float) -> np.ndarray:
    """log of :func:`discrete_gaussian_mass`, floored to stay finite."""
    return np.log(np.maximum(discrete_gaussian_mass(v, mu, sigma), _MASS_FLOOR))
