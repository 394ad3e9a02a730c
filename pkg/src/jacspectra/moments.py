"""Exact low moments of the depth-L Jacobian spectrum.

With chi = sigma_w^2 mu_1 evaluated at the fixed point, the first two moments
of the squared-singular-value distribution are

    m1 = chi^L
    m2 = chi^{2L} * L * (mu_2/mu_1^2 + 1/L - 1 - s1)

so the variance at criticality (chi = 1) is  L * (mu_2/mu_1^2 - 1 - s1):
linear depth growth unless the weights are orthogonal (s1 = 0) and the slope
distribution concentrates (mu_2/mu_1^2 -> 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .activations import mu_k
from .density import SpectralDensity
from .errors import ConvergenceError
from .propagation import NetworkConfig, resolve_qstar

_NORMALIZATION_SLACK = 1e-2


@dataclass(frozen=True)
class MomentSummary:
    m1: float
    m2: float
    variance: float
    mu1: float
    mu2: float
    chi: float
    qstar: float

    def as_dict(self) -> dict:
        return {
            "m1": self.m1,
            "m2": self.m2,
            "variance": self.variance,
            "chi": self.chi,
            "qstar": self.qstar,
        }


def jacobian_moments(config: NetworkConfig, rule=None) -> MomentSummary:
    """First two spectral moments of J J^T for the given network."""
    fp = resolve_qstar(config, rule)
    if not fp.converged:
        raise ConvergenceError(
            f"fixed point did not converge for {config.activation.name} "
            f"(sigma_w={config.sigma_w}, sigma_b={config.sigma_b})",
            last_iterate=fp.qstar,
            residual=fp.residual,
        )
    q = fp.qstar
    mu1 = mu_k(config.activation, q, 1, rule)
    mu2 = mu_k(config.activation, q, 2, rule)
    chi = config.sigma_w**2 * mu1
    L = config.depth
    s1 = config.ensemble.s1
    m1 = chi**L
    m2 = chi ** (2 * L) * L * (mu2 / mu1**2 + 1.0 / L - 1.0 - s1)
    return MomentSummary(
        m1=m1,
        m2=m2,
        variance=m2 - m1 * m1,
        mu1=mu1,
        mu2=mu2,
        chi=chi,
        qstar=q,
    )


def moments_from_density(density: SpectralDensity, k: int) -> float:
    """k-th moment of a density: trapezoid over the grid plus atom terms.

    Warns when the total mass strays from one by more than 1e-2 (the grid
    probably does not cover the support).
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    total = density.total_mass()
    if abs(total - 1.0) > _NORMALIZATION_SLACK:
        warnings.warn(
            f"density mass {total:.4f} deviates from 1 by more than {_NORMALIZATION_SLACK}",
            stacklevel=2,
        )
    cont = float(np.trapezoid(density.rho * density.grid**k, density.grid))
    return cont + sum(mass * loc**k for loc, mass in density.atoms)
