"""Forward signal-propagation statistics.

The pre-activation variance q^l of a wide random network obeys the depth
recursion

    q^l = sigma_w^2 * integral Dh phi(sqrt(q^{l-1}) h)^2 + sigma_b^2,

whose fixed point q* sets the Gaussian at which all slope statistics are
evaluated.  Criticality is the curve chi = sigma_w^2 * mu_1(q*) = 1 in the
(sigma_w, sigma_b) plane; on it the mean squared singular value of the
depth-L Jacobian stays at one for every L.

The variance-matched depth schedule solves

    mu_2(q*)/mu_1(q*)^2 = 1 + s0sq/L

for q*(L), which pins the Jacobian spectral variance to s0sq at every depth
(orthogonal weights) and drives q* -> 0, sigma_w -> 1 as L grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .activations import ActivationSpec, mu_k, phi_sq_mean
from .ensembles import WeightEnsemble
from .errors import ActivationClassError, BracketError
from .special import QuadratureRule


@dataclass(frozen=True)
class FixedPoint:
    qstar: float
    chi: float
    iterations: int
    converged: bool
    residual: float


@dataclass(frozen=True)
class NetworkConfig:
    """A random network: depth, scales, nonlinearity, weight ensemble.

    ``width`` is only needed for simulation.  ``qstar`` pins the
    pre-activation variance explicitly (used by variance-matched depth
    schedules); when None it is resolved from (sigma_w, sigma_b) by
    ``resolve_qstar``.
    """

    activation: ActivationSpec
    ensemble: WeightEnsemble
    sigma_w: float
    sigma_b: float
    depth: int
    width: Optional[int] = None
    qstar: Optional[float] = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive")
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be nonnegative")
        if self.width is not None and self.width < 2:
            raise ValueError("width must be >= 2 for simulation")
        if abs(self.ensemble.sigma_w - self.sigma_w) > 1e-12 * (1 + self.sigma_w):
            raise ValueError("ensemble.sigma_w must match config.sigma_w")

    def with_depth(self, depth: int) -> "NetworkConfig":
        return replace(self, depth=depth)


def _variance_map(activation, sigma_w, sigma_b, q, rule):
    return sigma_w * sigma_w * phi_sq_mean(activation, q, rule) + sigma_b * sigma_b


def chi(activation: ActivationSpec, sigma_w: float, qstar: float, rule=None) -> float:
    """Mean squared singular value of one D W layer factor at the fixed point."""
    return sigma_w * sigma_w * mu_k(activation, qstar, 1, rule)


def qstar_fixed_point(
    activation: ActivationSpec,
    sigma_w: float,
    sigma_b: float,
    *,
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    q0: float = 1.0,
    ceiling: float = 1e8,
    rule: QuadratureRule | None = None,
) -> FixedPoint:
    """Damped fixed-point iteration of the variance recursion.

    Returns converged=False (with the last iterate and residual) at the
    iteration cap or when the iterate exceeds ``ceiling``.
    """
    q = q0
    residual = math.inf
    for it in range(1, max_iter + 1):
        t = _variance_map(activation, sigma_w, sigma_b, q, rule)
        residual = abs(t - q)
        if residual <= tol * (1.0 + abs(q)):
            q = t
            return FixedPoint(q, chi(activation, sigma_w, max(q, _TINY_Q), rule), it, True, residual)
        q = (1.0 - damping) * q + damping * t
        if q > ceiling or not math.isfinite(q):
            return FixedPoint(q, math.nan, it, False, residual)
    return FixedPoint(q, chi(activation, sigma_w, max(q, _TINY_Q), rule), max_iter, False, residual)


_TINY_Q = 1e-300


def fixed_point_is_degenerate(
    activation: ActivationSpec, sigma_w: float, sigma_b: float, rule=None
) -> bool:
    """True when the variance map is the identity (every q is a fixed point).

    Happens exactly on scale-free critical points such as the linear network
    at (1, 0); the fixed point then carries no information and callers should
    report q* = 0.
    """
    for q in (0.5, 1.0, 2.0):
        if abs(_variance_map(activation, sigma_w, sigma_b, q, rule) - q) > 1e-12 * (1.0 + q):
            return False
    return True


def critical_sigma_w(
    activation: ActivationSpec,
    sigma_b: float,
    *,
    tol: float = 1e-10,
    rule: QuadratureRule | None = None,
) -> tuple[float, float]:
    """Weight scale on the critical line chi = 1 at the given sigma_b.

    Bisection on g(sigma_w) = chi(sigma_w, sigma_b) - 1 with the fixed point
    re-solved at every trial sigma_w; the initial bracket [0.5, 2] expands by
    doubling within (1e-6, 1e3).  Returns (sigma_w, qstar).
    """

    def g(sw: float) -> float:
        fp = qstar_fixed_point(activation, sw, sigma_b, rule=rule)
        return fp.chi - 1.0

    lo, hi = 0.5, 2.0
    glo, ghi = g(lo), g(hi)
    while glo > 0.0 and lo > 1e-6:
        hi, ghi = lo, glo
        lo = max(lo / 2.0, 1e-6)
        glo = g(lo)
    while ghi < 0.0 and hi < 1e3:
        lo, glo = hi, ghi
        hi = min(hi * 2.0, 1e3)
        ghi = g(hi)
    if glo > 0.0 or ghi < 0.0:
        raise BracketError(
            f"no criticality crossing for {activation.name} at sigma_b={sigma_b} "
            f"in sigma_w range (1e-6, 1e3)"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol:
            fp = qstar_fixed_point(activation, mid, sigma_b, rule=rule)
            return mid, fp.qstar
        if gm < 0.0:
            lo = mid
        else:
            hi = mid
    raise BracketError("criticality bisection failed to reach tolerance")


def _is_scale_degenerate(activation: ActivationSpec) -> bool:
    # squared-slope law independent of q*: all kinks at the origin
    if activation.pieces is None:
        return False
    return all(k == 0.0 for k in activation.kinks)


def double_scaling_qstar(
    activation: ActivationSpec,
    depth: int,
    sigma0_sq: float,
    *,
    tol: float = 1e-12,
    rule: QuadratureRule | None = None,
) -> tuple[float, float]:
    """q*(L) pinning the Jacobian spectral variance to sigma0_sq (orthogonal).

    Solves mu_2(q*)/mu_1(q*)^2 = 1 + sigma0_sq/depth by bisection on
    q* in [1e-12, 1e2] and returns (q*, critical sigma_w = mu_1(q*)^{-1/2}).
    """
    if _is_scale_degenerate(activation):
        raise ActivationClassError(
            f"{activation.name} has a scale-free slope distribution; "
            "no q* can hold the spectral variance fixed across depth"
        )
    target = 1.0 + sigma0_sq / depth

    def h(q: float) -> float:
        m1 = mu_k(activation, q, 1, rule)
        m2 = mu_k(activation, q, 2, rule)
        return m2 / (m1 * m1) - target

    lo, hi = 1e-12, 1e2
    if h(lo) > 0.0:
        raise BracketError("variance-ratio already above target at q*=1e-12")
    if h(hi) < 0.0:
        raise BracketError("variance-ratio below target everywhere up to q*=1e2")
    for _ in range(300):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        hm = h(mid)
        if abs(hm) <= tol:
            lo = hi = mid
            break
        if hm < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    q = 0.5 * (lo + hi)
    sigma_w = 1.0 / math.sqrt(mu_k(activation, q, 1, rule))
    return q, sigma_w


def resolve_qstar(config: NetworkConfig, rule=None) -> FixedPoint:
    """Fixed point for a config, honoring an explicit qstar override."""
    if config.qstar is not None:
        return FixedPoint(
            qstar=config.qstar,
            chi=chi(config.activation, config.sigma_w, config.qstar, rule),
            iterations=0,
            converged=True,
            residual=0.0,
        )
    return qstar_fixed_point(config.activation, config.sigma_w, config.sigma_b, rule=rule)


@dataclass(frozen=True)
class PhaseGrid:
    sigma_w: np.ndarray
    sigma_b: np.ndarray
    qstar: np.ndarray
    chi: np.ndarray
    converged: np.ndarray

    def rows(self):
        for i in range(self.sigma_w.size):
            yield (
                float(self.sigma_w[i]),
                float(self.sigma_b[i]),
                float(self.qstar[i]),
                float(self.chi[i]),
                bool(self.converged[i]),
            )


def phase_grid(
    activation: ActivationSpec,
    sigma_w_values,
    sigma_b_values,
    *,
    rule: QuadratureRule | None = None,
) -> PhaseGrid:
    """Fixed point and chi on the product grid; non-converged cells flagged."""
    sws, sbs, qs, chis, flags = [], [], [], [], []
    for sb in np.asarray(sigma_b_values, dtype=float):
        for sw in np.asarray(sigma_w_values, dtype=float):
            fp = qstar_fixed_point(activation, float(sw), float(sb), rule=rule)
            sws.append(sw)
            sbs.append(sb)
            qs.append(fp.qstar)
            chis.append(fp.chi)
            flags.append(fp.converged)
    return PhaseGrid(
        sigma_w=np.array(sws),
        sigma_b=np.array(sbs),
        qstar=np.array(qs),
        chi=np.array(chis),
        converged=np.array(flags, dtype=bool),
    )


def critical_config(
    activation: ActivationSpec,
    ensemble_kind: str,
    sigma_b: float,
    depth: int,
    *,
    width: Optional[int] = None,
    rule=None,
) -> NetworkConfig:
    """Config on the critical line at the given sigma_b."""
    from .ensembles import WeightEnsemble as _WE

    sigma_w, qstar = critical_sigma_w(activation, sigma_b, rule=rule)
    return NetworkConfig(
        activation=activation,
        ensemble=_WE(ensemble_kind, sigma_w),
        sigma_w=sigma_w,
        sigma_b=sigma_b,
        depth=depth,
        width=width,
        qstar=qstar,
    )


def double_scaled_config(
    activation: ActivationSpec,
    depth: int,
    sigma0_sq: float,
    *,
    width: Optional[int] = None,
    rule=None,
) -> NetworkConfig:
    """Orthogonal config at depth with variance-matched q*(depth)."""
    from .ensembles import orthogonal as _orth

    qstar, sigma_w = double_scaling_qstar(activation, depth, sigma0_sq, rule=rule)
    return NetworkConfig(
        activation=activation,
        ensemble=_orth(sigma_w),
        sigma_w=sigma_w,
        sigma_b=0.0,
        depth=depth,
        width=width,
        qstar=qstar,
    )
