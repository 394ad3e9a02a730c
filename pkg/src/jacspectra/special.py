"""Special functions and Gaussian quadrature primitives.

Everything downstream integrates against the standard normal measure

    Dh = dh/sqrt(2 pi) * exp(-h^2/2),

so the quadrature rule returned here is normalized for that measure: weights
sum to one and an n-node rule integrates polynomials up to degree 2n-1
exactly.

The two transcendental solvers are kept self-contained:

  * ``lambert_w0`` -- principal branch of W, where W(x) e^{W(x)} = x,
    by Halley iteration from a seed chosen by region (Maclaurin series for
    small argument, branch-point series near -1/e, log asymptotics for large
    argument).
  * ``r_lambert`` -- the generalized root W_r of  w e^w + r w = z,  pinned to
    the branch that passes through w = 0 at z = 0 and followed from there by
    damped-Newton continuation along a path in z.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import ConvergenceError

_INV_E = math.exp(-1.0)
_SQRT2 = math.sqrt(2.0)

erf = math.erf  # total on the reals; |error| well below 1e-14

erf_vec = np.vectorize(math.erf, otypes=[float])


def norm_cdf(x):
    """Standard normal CDF, elementwise."""
    return 0.5 * (1.0 + erf_vec(np.asarray(x, dtype=float) / _SQRT2))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def erf_inv(y: float) -> float:
    """Inverse of ``erf`` on (-1, 1).

    Bisection bracket on [0, 7] followed by Newton polish; round-trips to
    better than 1e-12.
    """
    if not -1.0 < y < 1.0:
        raise ValueError(f"erf_inv requires |y| < 1, got {y}")
    if y == 0.0:
        return 0.0
    target = abs(y)
    lo, hi = 0.0, 7.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if math.erf(mid) < target:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    # Newton: d/dx erf(x) = 2/sqrt(pi) exp(-x^2)
    for _ in range(4):
        r = math.erf(x) - target
        x -= r * math.sqrt(math.pi) / 2.0 * math.exp(x * x)
    return math.copysign(x, y)


def _w0_seed(z: complex) -> complex:
    if abs(z + _INV_E) < 0.25:
        # branch-point series in p = sqrt(2(e z + 1)); the principal sqrt
        # picks the upper side for arguments approaching the cut from above
        p = cmath.sqrt(2.0 * (math.e * z + 1.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    if abs(z) <= 0.3:  # Maclaurin series converges for |z| < 1/e
        return z * (1.0 - z + 1.5 * z * z - (8.0 / 3.0) * z**3)
    L1 = cmath.log(z)
    L2 = cmath.log(L1)
    return L1 - L2 + L2 / L1


def _w0_f(w: complex, z: complex) -> complex:
    if w.real > 700.0:
        return complex(math.inf, 0.0)
    return w * cmath.exp(w) - z


def lambert_w0(z) -> complex:
    """Principal branch of the Lambert-W function for complex argument.

    Raises ValueError for real arguments below the branch point -1/e; complex
    arguments on the cut are resolved toward the upper side.
    """
    z = complex(z)
    if z.imag == 0.0 and z.real < -_INV_E:
        raise ValueError(f"lambert_w0 principal branch needs z >= -1/e on the reals, got {z.real}")
    if z == 0:
        return 0j
    if abs(z) > 1e290:
        # solve w + log(w) = log(z) instead; w e^w would overflow
        lz = cmath.log(z)
        w = lz - cmath.log(lz)
        for _ in range(50):
            g = w + cmath.log(w) - lz
            if abs(g) <= 1e-15 * (1.0 + abs(lz)):
                break
            w -= g / (1.0 + 1.0 / w)
        return w
    if 0.3 < abs(z) < 6.0 and abs(z + _INV_E) >= 0.25:
        # mid-range annulus: no series seed is reliable here, so follow the
        # branch down a ray from the asymptotic regime (the ray never meets
        # the cut, which lies on the negative reals only)
        w = None
        for mag in (6.0, 4.0, 2.5, 1.6, 1.0, 0.65, 0.42):
            if mag < abs(z):
                break
            zk = z * (mag / abs(z))
            w = _halley_w0(zk, _w0_seed(zk) if w is None else w)
        return _halley_w0(z, w)
    return _halley_w0(z, _w0_seed(z))


def _halley_w0(z: complex, w: complex) -> complex:
    tol = 1e-13 * (1.0 + abs(z))
    f = _w0_f(w, z)
    for _ in range(50):
        if abs(f) <= tol:
            break
        # Halley step, damped so mediocre mid-range seeds cannot blow up
        ew = cmath.exp(w) if w.real <= 700.0 else complex(math.inf)
        fp = ew * (w + 1.0)
        denom = fp - f * (w + 2.0) / (2.0 * (w + 1.0))
        if denom == 0 or not cmath.isfinite(denom):
            denom = fp if fp != 0 else 1.0
        step = -f / denom
        for _ in range(9):
            w_new = w + step
            f_new = _w0_f(w_new, z)
            if abs(f_new) < abs(f):
                w, f = w_new, f_new
                break
            step *= 0.5
        else:
            break
    return w


def _rlam_f(w: complex, r: complex, z: complex) -> complex:
    if w.real > 700.0:  # exp would overflow; certainly not on our branch
        return complex(math.inf, 0.0)
    return w * cmath.exp(w) + r * w - z


def _newton_rlambert(r: complex, z: complex, w0: complex, tol: float, max_iter: int = 60):
    w = w0
    f = _rlam_f(w, r, z)
    for _ in range(max_iter):
        if abs(f) <= tol:
            return w, f
        fp = cmath.exp(w) * (w + 1.0) + r
        if fp == 0:
            break
        step = -f / fp
        # damped: halve until residual decreases
        for _ in range(9):
            w_new = w + step
            f_new = _rlam_f(w_new, r, z)
            if abs(f_new) < abs(f):
                w, f = w_new, f_new
                break
            step *= 0.5
        else:
            break
    return None, f


def r_lambert(r, z, *, steps: int = 32, via=None) -> complex:
    """Root of  w e^w + r w = z  on the branch continuous with w=0 at z=0.

    The root is tracked by damped Newton along a straight-line path in z
    (optionally routed through the waypoint ``via``), subdividing segments
    where the tracking stalls.  ``r_lambert(0, z)`` agrees with
    ``lambert_w0(z)``.
    """
    r = complex(r)
    z = complex(z)
    if z == 0:
        return 0j
    waypoints = [0j]
    if via is not None:
        waypoints.append(complex(via))
    waypoints.append(z)

    w = 0j
    z_prev = 0j
    for wp in waypoints[1:]:
        seg = [z_prev + (wp - z_prev) * k / steps for k in range(1, steps + 1)]
        k = 0
        depth = 0
        while k < len(seg):
            zt = seg[k]
            # relative tolerance: for tiny targets the root scales with z
            # and an absolute floor would accept w = 0 for everything
            tol = 1e-13 * abs(zt)
            root, res = _newton_rlambert(r, zt, w, tol)
            if root is None:
                if depth >= 6:
                    raise ConvergenceError(
                        f"r_lambert continuation stalled at z={zt}",
                        last_iterate=w,
                        residual=abs(res),
                    )
                # subdivide the failing segment
                start = z_prev if k == 0 else seg[k - 1]
                seg[k:k + 1] = [start + (zt - start) * j / 8 for j in range(1, 9)]
                depth += 1
                continue
            w = root
            z_prev = zt
            k += 1
    return w


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations under the standard normal measure.

    integral f(h) Dh  ~=  sum_i weights[i] * f(nodes[i]),  sum weights = 1.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def gauss_normal_rule(n: int) -> QuadratureRule:
    """Gauss rule with ``n`` nodes, exact for polynomials of degree <= 2n-1.

    Moderate sizes come from Gauss-Hermite nodes (weight e^{-x^2}) rescaled
    by h = sqrt(2) x to the unit-variance normal measure; large sizes use
    Golub-Welsch on the probabilists' Hermite Jacobi matrix, since the
    polynomial-evaluation route overflows past a few hundred nodes.
    """
    if n < 1:
        raise ValueError("need at least one node")
    if n <= 250:
        x, w = hermgauss(n)
        nodes = _SQRT2 * x
        weights = w / math.sqrt(math.pi)
    else:
        from scipy.linalg import eigh_tridiagonal

        off = np.sqrt(np.arange(1.0, n))
        nodes, vecs = eigh_tridiagonal(np.zeros(n), off)
        weights = vecs[0] ** 2
        keep = weights > 0.0  # extreme-node weights underflow to exact zero
        nodes, weights = nodes[keep], weights[keep]
    weights = weights / weights.sum()
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(nodes=nodes, weights=weights)


_RULE_CACHE: dict[int, QuadratureRule] = {}

DEFAULT_QUAD_NODES = 201


def default_rule(n: int = DEFAULT_QUAD_NODES) -> QuadratureRule:
    rule = _RULE_CACHE.get(n)
    if rule is None:
        rule = _RULE_CACHE[n] = gauss_normal_rule(n)
    return rule
