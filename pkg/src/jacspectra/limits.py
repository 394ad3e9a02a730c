"""Closed-form infinite-depth limits of the Jacobian spectrum.

In the variance-matched deep limit (spectral variance pinned to s0sq,
orthogonal weights) the squared-singular-value distribution converges to one
of two universal laws, distinguished only by the squared-slope distribution
of the nonlinearity as q* -> 0:

  * {0,1}-valued squared slope ("Bernoulli" class, e.g. saturating or
    shifted piecewise-linear units):

        G(z) = (1/z) * s0sq / (s0sq + W(-s0sq/z)),

    with W the principal Lambert-W branch.  The bulk occupies (0, e*s0sq)
    with its right edge at lambda1 = e*s0sq; a point mass sits at
    lambda2 = exp(s0sq) whenever s0sq <= 1, and the density diverges
    (integrably) at the origin.

  * squared slope concentrating smoothly at 1 (e.g. erf-like or
    sigmoid-weighted-linear units):

        G(z) = W_r(-s0sq * z * exp(s0sq)) / (z * s0sq),   r = -exp(s0sq) * z,

    with W_r the generalized root of w e^w + r w = z on the branch through
    the origin.  The support is a single interval with edges

        lambda_pm = (1/2) exp(-sg^2/2) (2 + sg'^2),
        sg^2, sg'^2 in {s0 (s0 +- sqrt(s0^2+4))},

    the labels resolved by sorting (the two printed conventions for the
    edges swap their subscripts; numerically the smaller one is the left
    edge).
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .density import SQUARED_SINGULAR, SpectralDensity
from .errors import ConvergenceError, PoleError
from .special import _newton_rlambert, lambert_w0, r_lambert

BERNOULLI = "bernoulli"
SMOOTH = "smooth"

_READOUT_EPS = 1e-9
_PROBE_EPS = (1e-6, 1e-7, 1e-8, 1e-9)
_ATOM_SPREAD_TOL = 0.02
_ATOM_MASS_MIN = 1e-3


def bernoulli_G(sigma0_sq: float, z) -> complex:
    """Limit resolvent for {0,1}-slope nonlinearities."""
    if sigma0_sq <= 0:
        raise ValueError("sigma0_sq must be positive")
    z = complex(z)
    if z == 0:
        raise PoleError("bernoulli_G has a pole at z = 0")
    w = lambert_w0(-sigma0_sq / z)
    return (1.0 / z) * sigma0_sq / (sigma0_sq + w)


def smooth_G(sigma0_sq: float, z) -> complex:
    """Limit resolvent for smoothly-concentrating squared slopes."""
    if sigma0_sq <= 0:
        raise ValueError("sigma0_sq must be positive")
    z = complex(z)
    if z == 0:
        raise PoleError("smooth_G has a pole at z = 0")
    r = -cmath.exp(sigma0_sq) * z
    target = -sigma0_sq * z * cmath.exp(sigma0_sq)
    try:
        w = r_lambert(r, target)
    except ConvergenceError:
        # reroute through the upper half plane when the straight segment
        # stalls near the negative real axis
        w = r_lambert(r, target, via=1j * abs(target))
    G = w / (z * sigma0_sq)
    if z.imag > 0.0 and G.imag > 0.0:
        # on the support the roots come in a near-conjugate pair and the
        # origin-connected continuation may surface on either side; the
        # physical resolvent has Im G <= 0 for Im z > 0, so polish the
        # mirrored root and keep it when it lands on that side
        w2, _ = _newton_rlambert(r, target, w.conjugate(), 1e-13 * abs(target))
        if w2 is not None:
            G2 = w2 / (z * sigma0_sq)
            if G2.imag < G.imag:
                G = G2
    return G


def bernoulli_edges_atoms(sigma0_sq: float) -> dict:
    """Edge locations and probed atom masses of the Bernoulli-class limit.

    lambda0 = 0 and lambda2 = exp(s0sq) are the candidate point masses
    (lambda2 only for s0 <= 1); lambda1 = e*s0sq is the right edge of the
    bulk.  Masses come from the residue probe; the origin probe converges
    to zero mass (the divergence there is integrable, not a point mass).
    """
    lambda1 = math.e * sigma0_sq
    lambda2 = math.exp(sigma0_sq)
    atoms = []
    candidates = [0.0]
    if sigma0_sq <= 1.0:
        candidates.append(lambda2)
    for loc in candidates:
        mass, is_atom = _residue_probe(lambda z: bernoulli_G(sigma0_sq, z), loc)
        if is_atom:
            atoms.append((loc, mass))
    return {
        "lambda0": 0.0,
        "lambda1": lambda1,
        "lambda2": lambda2,
        "atoms": tuple(atoms),
    }


def smooth_edges(sigma0_sq: float) -> tuple[float, float]:
    """Support endpoints (lambda_minus, lambda_plus) of the smooth limit."""
    s0 = math.sqrt(sigma0_sq)
    root = math.sqrt(sigma0_sq + 4.0)
    sg_p = s0 * (s0 + root)
    sg_m = s0 * (s0 - root)
    lam_a = 0.5 * math.exp(-0.5 * sg_p) * (2.0 + sg_m)
    lam_b = 0.5 * math.exp(-0.5 * sg_m) * (2.0 + sg_p)
    return (min(lam_a, lam_b), max(lam_a, lam_b))


def smooth_s_edges(sigma0_sq: float) -> tuple[float, float]:
    lo, hi = smooth_edges(sigma0_sq)
    return math.sqrt(lo), math.sqrt(hi)


def _residue_probe(g_fn, loc: float) -> tuple[float, bool]:
    vals = []
    for eps in _PROBE_EPS:
        g = g_fn(loc + 1j * eps)
        vals.append(eps * abs(g.imag))
    vals = np.array(vals)
    if np.any(vals <= 0.0):
        return 0.0, False
    spread = (vals.max() - vals.min()) / vals.mean()
    mass = min(float(vals[-1]), 1.0)
    return mass, bool(spread <= _ATOM_SPREAD_TOL and mass >= _ATOM_MASS_MIN)


def _density_from_G(g_fn, grid, eps, atoms, meta) -> SpectralDensity:
    grid = np.asarray(grid, dtype=float)
    rho = np.empty_like(grid)
    for i, lam in enumerate(grid):
        rho[i] = -g_fn(lam + 1j * eps).imag / math.pi
    rho = np.maximum(rho, 0.0)
    keep = np.ones(grid.size, dtype=bool)
    for loc, _ in atoms:
        keep &= np.abs(grid - loc) > 100.0 * eps
    return SpectralDensity(
        domain=SQUARED_SINGULAR,
        grid=grid[keep],
        rho=rho[keep],
        atoms=tuple(atoms),
        metadata=meta,
    )


def bernoulli_density(sigma0_sq: float, grid, *, eps: float = _READOUT_EPS) -> SpectralDensity:
    """Bernoulli-class limit density on a squared-singular-value grid."""
    info = bernoulli_edges_atoms(sigma0_sq)
    meta = {"class": BERNOULLI, "sigma0_sq": sigma0_sq, "readout_epsilon": eps}
    meta.update({k: info[k] for k in ("lambda0", "lambda1", "lambda2")})
    return _density_from_G(
        lambda z: bernoulli_G(sigma0_sq, z), grid, eps, info["atoms"], meta
    )


def smooth_density(sigma0_sq: float, grid, *, eps: float = _READOUT_EPS) -> SpectralDensity:
    """Smooth-class limit density on a squared-singular-value grid."""
    lo, hi = smooth_edges(sigma0_sq)
    meta = {
        "class": SMOOTH,
        "sigma0_sq": sigma0_sq,
        "readout_epsilon": eps,
        "lambda_minus": lo,
        "lambda_plus": hi,
    }
    return _density_from_G(lambda z: smooth_G(sigma0_sq, z), grid, eps, (), meta)
