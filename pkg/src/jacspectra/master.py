"""Self-consistent resolvent solver for the depth-L Jacobian spectrum.

The resolvent G(z) of the squared-singular-value distribution of the
depth-L Jacobian satisfies the implicit equation

    z G - 1 = M(z^{1/L} * F(z G - 1)),     F(x) = S(x) ((1+x)/x)^{1-1/L},

where M is the squared-slope transform of the nonlinearity at the fixed
point and S is the weight ensemble's S-transform.  Principal branches are
used for both fractional powers; the choice is validated against Monte Carlo
spectra rather than argued analytically.

For each real lambda the root is tracked from the asymptotic regime down to
the real axis: starting at z0 = lambda + i b^N with G0 = 1/z0, each rung
z_k = lambda + i b^{N-k} is solved by damped Newton seeded at the previous
root, ending at lambda + i eps_final where the density is read off as
rho = -Im G / pi.  Distinct lambdas are independent and are marched in
lockstep as one vectorized ladder.

Point masses are located by residue probing: at a candidate location the
quantity eps * |Im G| tends to the atom mass as eps -> 0, and its
convergence over the last rungs of the ladder separates true atoms from
integrable divergences.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .activations import bernoulli_p, slope_distribution
from .density import SQUARED_SINGULAR, SpectralDensity, make_lambda_grid, to_singular_domain
from .ensembles import ORTHOGONAL
from .errors import BranchLossError, ConvergenceError, PoleError
from .moments import jacobian_moments
from .propagation import NetworkConfig, resolve_qstar
from .special import default_rule

__all__ = [
    "SolverSettings",
    "master_residual",
    "solve_G_at",
    "density",
    "probe_atom",
    "atom_candidates",
    "make_lambda_grid",
    "to_singular_domain",
]

_FD_STEP = 1e-4  # relative to |M|; large enough to beat the cancellation noise near atoms, truncation ~1e-8
_DAMPING_HALVINGS = 8
_JUMP_FACTOR = 10.0
_JUMP_G_CAP = 10.0  # heuristic only meaningful away from atoms/divergences
_JUMP_REFINE_STEPS = 8
_ADAPTIVE_EPS_REL = 1e-3
_ATOM_SPREAD_TOL = 0.02
_ATOM_MASS_MIN = 1e-3
_ATOM_PRUNE_EPS_FACTOR = 100.0
_ATOM_PROBE_EPS_FLOOR = 1e-6
_FAILURE_BUDGET = 0.05


@dataclass(frozen=True)
class SolverSettings:
    step_base: float = 1.5
    half_steps: int = 40
    newton_tol: float = 1e-11
    newton_max_iter: int = 100
    final_epsilon: float = 1e-6
    quad_nodes: int = 201

    def __post_init__(self):
        if not self.step_base > 1.0:
            raise ValueError("step_base must exceed 1")
        if self.half_steps < 1:
            raise ValueError("half_steps must be positive")
        if not (self.step_base**-self.half_steps <= self.final_epsilon <= self.step_base**self.half_steps):
            raise ValueError("final_epsilon must lie within [b^-N, b^N]")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("bad Newton settings")


def _m_d2_evaluator(config: NetworkConfig, qstar: float, n_nodes: int) -> Callable:
    """Vectorized w -> M(w) closure at the resolved fixed point."""
    act = config.activation
    if act.pieces is not None:
        vals, masses = slope_distribution(act, qstar)
        coef = masses * vals

        def m_fn(w):
            w = np.asarray(w, dtype=complex)
            return (coef / (w[..., None] - vals)).sum(axis=-1)

        return m_fn
    rule = default_rule(n_nodes)
    d = np.asarray(act.dphi(math.sqrt(qstar) * rule.nodes), dtype=float)
    t = d * d
    coef = rule.weights * t

    def m_fn(w):
        w = np.asarray(w, dtype=complex)
        return (coef / (w[..., None] - t)).sum(axis=-1)

    return m_fn


def _s_evaluator(config: NetworkConfig) -> Callable:
    inv_sw2 = config.sigma_w**-2.0
    if config.ensemble.kind == ORTHOGONAL:
        return lambda x: inv_sw2
    return lambda x: inv_sw2 / (1.0 + x)


def _residual_factory(config: NetworkConfig, qstar: float, n_nodes: int) -> Callable:
    m_fn = _m_d2_evaluator(config, qstar, n_nodes)
    s_fn = _s_evaluator(config)
    L = config.depth
    p = 1.0 - 1.0 / L
    inv_L = 1.0 / L

    def res(G, z):
        M = z * G - 1.0
        with np.errstate(all="ignore"):
            F = s_fn(M) * ((1.0 + M) / M) ** p
            w = z**inv_L * F
            return M - m_fn(w)

    return res


def _first_moment(config: NetworkConfig, qstar: float) -> float:
    """m1 = chi^L with overflow guards, used only to seed the ladder."""
    from .activations import mu_k

    chi = config.sigma_w**2 * mu_k(config.activation, qstar, 1)
    log_m1 = config.depth * math.log(max(chi, 1e-300))
    return math.exp(min(max(log_m1, -300.0), 300.0))


def master_residual(config: NetworkConfig, G, z, *, n_nodes: Optional[int] = None):
    """Residual of the implicit resolvent equation at (G, z).

    Zero exactly when G solves the equation.  Raises PoleError at the
    excluded points zG - 1 in {0, -1}.
    """
    fp = resolve_qstar(config)
    if not fp.converged:
        raise ConvergenceError("fixed point unresolved for master_residual", fp.qstar, fp.residual)
    G = np.asarray(G, dtype=complex)
    z = np.asarray(z, dtype=complex)
    M = z * G - 1.0
    if np.any(M == 0) or np.any(M == -1.0):
        raise PoleError("master residual evaluated at a pole (zG-1 in {0,-1})")
    res = _residual_factory(config, fp.qstar, n_nodes or SolverSettings().quad_nodes)
    out = res(G, z)
    return complex(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# vectorized Newton continuation


def _newton_batch(res_fn, z, G, tol, max_iter):
    """Damped Newton on a batch of (z, G); returns (G, converged, niter)."""
    n = G.shape[0]
    converged = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    G = G.copy()
    for it in range(max_iter):
        idx = np.nonzero(alive & ~converged)[0]
        if idx.size == 0:
            break
        Gi, zi = G[idx], z[idx]
        R = res_fn(Gi, zi)
        # tolerance relative to |M| = |zG-1|: the equation admits a pseudo
        # zone near M = 0 where the absolute residual ~ |M|^(1-1/L) becomes
        # arbitrarily small without M being a root; only the residual
        # measured against M's own scale separates the physical branch.
        # The (1+|M|)^2 term is the cancellation floor near atoms, where
        # both sides of the equation blow up together.
        absM = np.abs(zi * Gi - 1.0)
        tol_eff = tol * absM + 64.0 * np.finfo(float).eps * (1.0 + absM) ** 2
        ok = np.abs(R) <= tol_eff
        converged[idx[ok]] = True
        idx = idx[~ok]
        if idx.size == 0:
            continue
        Gi, zi, R, tol_eff = G[idx], z[idx], R[~ok], tol_eff[~ok]
        # central difference along the direction that moves M = zG-1 parallel
        # to the real axis: any other direction can push the probes across the
        # (1+M)/M branch cut when the root sits near the segment (-1, 0),
        # which happens throughout spectral gaps; the scale is |M|, the
        # variable the residual actually depends on
        h = _FD_STEP * (np.abs(zi * Gi - 1.0) + 1e-12) / np.abs(zi)
        step_dir = np.conj(zi) / np.abs(zi)
        dh = h * step_dir
        dR = (res_fn(Gi + dh, zi) - res_fn(Gi - dh, zi)) / (2.0 * dh)
        with np.errstate(all="ignore"):
            step = -R / dR
        step = np.where(np.isfinite(step), step, h)  # nudge off poles/NaNs
        # damped line search along the Newton direction
        absR = np.abs(R)
        absR[~np.isfinite(absR)] = np.inf
        settled = np.zeros(idx.size, dtype=bool)
        G_new = Gi.copy()
        factor = np.ones(idx.size)
        for _ in range(_DAMPING_HALVINGS + 1):
            trial = np.nonzero(~settled)[0]
            if trial.size == 0:
                break
            cand = Gi[trial] + step[trial] * factor[trial]
            Rc = res_fn(cand, zi[trial])
            better = np.abs(Rc) < absR[trial]
            better &= np.isfinite(Rc)
            G_new[trial[better]] = cand[better]
            settled[trial[better]] = True
            factor[trial[~better]] *= 0.5
        stuck = ~settled
        # stagnation at the noise floor counts as converged, not branch loss
        noise_ok = stuck & (absR <= 100.0 * tol_eff)
        converged[idx[noise_ok]] = True
        alive[idx[stuck & ~noise_ok]] = False  # no descent within 8 halvings
        G[idx[settled]] = G_new[settled]
        iters[idx] += 1
    failed = ~converged
    return G, ~failed, iters


class _LadderResult:
    def __init__(self, G, converged, fail_step, jump_flags, probe_eps, probe_vals):
        self.G = G
        self.converged = converged
        self.fail_step = fail_step
        self.jump_flags = jump_flags
        self.probe_eps = probe_eps  # (n, 5) last rung heights
        self.probe_vals = probe_vals  # (n, 5) eps * |Im G| there


def _run_ladder(res_fn, lams, eps_targets, settings: SolverSettings, m1: float = 1.0) -> _LadderResult:
    lams = np.asarray(lams, dtype=float)
    eps_targets = np.asarray(eps_targets, dtype=float)
    n = lams.size
    b = settings.step_base
    N = settings.half_steps
    min_target = float(eps_targets.min())
    # rungs b^{N-1}, b^{N-2}, ... extended far enough to reach every target
    k_max = N + int(math.ceil(math.log(1.0 / min_target, b))) + 1
    z0 = lams + 1j * b**N
    # seed on the physical branch: G ~ (1 + m1/z)/z.  M = zG - 1 = 0 solves
    # the equation identically (w -> infinity), so seeding at exactly 1/z
    # would hand Newton the spurious branch
    G = (1.0 + m1 / z0) / z0
    z_prev = z0
    done = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    fail_step = np.full(n, -1, dtype=int)
    jump_flags = np.zeros(n, dtype=bool)
    hist_eps = np.zeros((n, 5))
    hist_val = np.zeros((n, 5))
    for k in range(1, k_max + 1):
        rung = b ** (N - k)
        eff = np.maximum(rung, eps_targets)
        finishing = rung <= eps_targets
        active = ~done & ~failed
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        z_k = lams[idx] + 1j * eff[idx]
        G_prev = G[idx]
        # seed preserving M = zG - 1 across the rung: the root scales like
        # 1/z in the asymptotic regime, so carrying G directly would throw
        # the seed across the (1+M)/M branch cut
        seed = ((z_prev[idx] * G_prev - 1.0) + 1.0) / z_k
        G_new, conv, _ = _newton_batch(
            res_fn, z_k, seed, settings.newton_tol, settings.newton_max_iter
        )
        # heuristic: successive roots should move no faster than ~10x the z
        # step; a violation near moderate |G| signals a root hop (physical
        # and mirror roots nearly collide close to hard spectral edges), so
        # re-walk the rung in sub-steps to track the root through the pinch
        dz = np.abs(z_k - z_prev[idx])
        dG = np.abs(G_new - G_prev)
        jumped = conv & (dG > _JUMP_FACTOR * dz) & (np.abs(G_prev) <= _JUMP_G_CAP)
        if np.any(jumped):
            sub = np.nonzero(jumped)[0]
            G_sub = G_prev[sub]
            z_sub_prev = z_prev[idx][sub]
            ok_sub = np.ones(sub.size, dtype=bool)
            for t in range(1, _JUMP_REFINE_STEPS + 1):
                frac = t / _JUMP_REFINE_STEPS
                eps_t = eff[idx][sub] * (np.imag(z_sub_prev) / eff[idx][sub]) ** (1.0 - frac)
                z_t = lams[idx][sub] + 1j * eps_t
                seed_t = (z_sub_prev * G_sub) / z_t
                G_t, conv_t, _ = _newton_batch(
                    res_fn, z_t, seed_t, settings.newton_tol, settings.newton_max_iter
                )
                ok_sub &= conv_t
                G_sub = np.where(conv_t, G_t, G_sub)
                z_sub_prev = z_t
            G_new[sub] = G_sub
            conv[sub] &= ok_sub
            jump_flags[idx[sub]] = True
        newly_failed = ~conv
        failed[idx[newly_failed]] = True
        fail_step[idx[newly_failed]] = k
        ok = idx[conv]
        G[ok] = G_new[conv]
        z_prev[ok] = z_k[conv]
        # roll the residue-probe history
        hist_eps[ok, :-1] = hist_eps[ok, 1:]
        hist_val[ok, :-1] = hist_val[ok, 1:]
        hist_eps[ok, -1] = eff[ok]
        hist_val[ok, -1] = eff[ok] * np.abs(G[ok].imag)
        done[idx[finishing[idx]]] = True
        if np.all(done | failed):
            break
    return _LadderResult(G, ~failed, fail_step, jump_flags, hist_eps, hist_val)


def solve_G_at(config: NetworkConfig, lam: float, settings: SolverSettings | None = None) -> complex:
    """Resolvent at lambda + i final_epsilon by branch-tracked continuation."""
    settings = settings or SolverSettings()
    fp = resolve_qstar(config)
    if not fp.converged:
        raise ConvergenceError("fixed point unresolved", fp.qstar, fp.residual)
    res_fn = _residual_factory(config, fp.qstar, settings.quad_nodes)
    m1 = _first_moment(config, fp.qstar)
    out = _run_ladder(res_fn, np.array([lam]), np.array([settings.final_epsilon]), settings, m1)
    if not out.converged[0]:
        raise BranchLossError(
            f"continuation lost the branch at lambda={lam} (step {out.fail_step[0]})",
            step_index=int(out.fail_step[0]),
            last_iterate=complex(out.G[0]),
        )
    return complex(out.G[0])


def probe_atom(config: NetworkConfig, location: float, settings: SolverSettings | None = None):
    """Residue probe at a candidate atom location.

    Returns (mass, is_atom): eps * |Im G| over the last five rungs must have
    settled (relative spread below 2%) onto a mass above 1e-3 for the point
    to count as an atom; drifting values indicate an integrable divergence.
    """
    settings = settings or SolverSettings()
    fp = resolve_qstar(config)
    if not fp.converged:
        raise ConvergenceError("fixed point unresolved", fp.qstar, fp.residual)
    res_fn = _residual_factory(config, fp.qstar, settings.quad_nodes)
    m1 = _first_moment(config, fp.qstar)
    # below eps ~ 1e-6 the residual noise eps_mach*|M| ~ eps_mach*mass/eps
    # overwhelms the equation at an atom; the probe has converged long before
    eps = max(settings.final_epsilon, _ATOM_PROBE_EPS_FLOOR)
    out = _run_ladder(res_fn, np.array([location]), np.array([eps]), settings, m1)
    if not out.converged[0]:
        return 0.0, False
    vals = out.probe_vals[0]
    if np.any(vals <= 0.0):
        return 0.0, False
    mean = vals.mean()
    spread = (vals.max() - vals.min()) / mean
    mass = min(float(vals[-1]), 1.0)  # finite-eps probe bias can overshoot by O(eps)
    return mass, bool(spread <= _ATOM_SPREAD_TOL and mass >= _ATOM_MASS_MIN)


def atom_candidates(config: NetworkConfig, qstar: float) -> list:
    """Candidate point-mass locations for a config.

    Zero is always probed.  Orthogonal ensembles with a {0,1}-valued squared
    slope carry a point mass at (sigma_w^2)^L when the unit-slope fraction p
    is large enough (free-product atom mass 1 - L(1-p) > 0); that location
    tends to e^{sigma0^2} in the variance-matched deep limit.
    """
    cands = [0.0]
    act = config.activation
    if config.ensemble.kind == ORTHOGONAL and act.is_bernoulli:
        p = bernoulli_p(act, qstar)
        top_mass = 1.0 - config.depth * (1.0 - p)
        if top_mass > 1e-4:
            loc = config.sigma_w ** (2.0 * config.depth)
            if math.isfinite(loc):
                cands.append(loc)
    return cands


def density(
    config: NetworkConfig,
    grid,
    settings: SolverSettings | None = None,
    *,
    adaptive_epsilon: bool = True,
    detect_atoms: bool = True,
    extra_atom_candidates=(),
) -> SpectralDensity:
    """Squared-singular-value density of J J^T on the given lambda grid.

    Per-point readout offset: min(final_epsilon, 1e-3 * lambda) when adaptive
    (tiny lambdas need a proportionally small offset to resolve heavy bottom
    tails); the rung count is extended automatically to reach it.  Points
    whose continuation fails are flagged in the metadata (the call only
    raises when more than 5% fail).
    """
    settings = settings or SolverSettings()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise ValueError("grid must be a strictly increasing nonnegative 1-D array")
    fp = resolve_qstar(config)
    if not fp.converged:
        raise ConvergenceError("fixed point unresolved", fp.qstar, fp.residual)
    res_fn = _residual_factory(config, fp.qstar, settings.quad_nodes)

    if adaptive_epsilon:
        targets = np.minimum(settings.final_epsilon, np.maximum(grid * _ADAPTIVE_EPS_REL, 1e-280))
    else:
        targets = np.full(grid.shape, settings.final_epsilon)

    out = _run_ladder(res_fn, grid, targets, settings, _first_moment(config, fp.qstar))
    failed_frac = float((~out.converged).mean())
    if failed_frac > _FAILURE_BUDGET:
        worst = int(np.nonzero(~out.converged)[0][0])
        raise BranchLossError(
            f"{failed_frac:.1%} of grid points lost the branch (budget {_FAILURE_BUDGET:.0%})",
            step_index=int(out.fail_step[worst]),
            last_iterate=complex(out.G[worst]),
        )
    rho = -out.G.imag / math.pi
    rho[~out.converged] = 0.0
    # Newton stops at a residual ~ tol*(1+|M|) (or 100x that when stagnating
    # at the cancellation floor); the induced G noise is that divided by |z|.
    # Where the true Im G is ~0 (off support, next to atoms) the readout can
    # come out slightly negative within this envelope; clamp it, and fail on
    # anything larger, which would mean a lost branch rather than noise.
    z_final = grid + 1j * targets
    absM = np.abs(z_final * out.G - 1.0)
    eps_mach = np.finfo(float).eps
    noise = 1e-8 + 200.0 * (
        settings.newton_tol * (1.0 + absM) + 64.0 * eps_mach * (1.0 + absM) ** 2
    ) / np.maximum(grid, targets)
    too_negative = rho < -noise
    if np.any(too_negative):
        worst = int(np.argmin(rho + noise))
        raise BranchLossError(
            f"negative density {rho[worst]:.3e} at lambda={grid[worst]} exceeds the noise envelope",
            last_iterate=complex(out.G[worst]),
        )
    rho = np.maximum(rho, 0.0)

    atoms = []
    if detect_atoms:
        for loc in list(atom_candidates(config, fp.qstar)) + list(extra_atom_candidates):
            mass, is_atom = probe_atom(config, loc, settings)
            if is_atom:
                atoms.append((float(loc), float(mass)))

    keep = np.ones(grid.size, dtype=bool)
    for loc, _ in atoms:
        keep &= np.abs(grid - loc) > _ATOM_PRUNE_EPS_FACTOR * settings.final_epsilon
    keep |= ~out.converged  # keep failed points in place (rho zeroed, flagged)

    meta = {
        "qstar": fp.qstar,
        "depth": config.depth,
        "sigma_w": config.sigma_w,
        "sigma_b": config.sigma_b,
        "activation": config.activation.name,
        "activation_params": dict(config.activation.params),
        "ensemble": config.ensemble.kind,
        "settings": {
            "step_base": settings.step_base,
            "half_steps": settings.half_steps,
            "newton_tol": settings.newton_tol,
            "newton_max_iter": settings.newton_max_iter,
            "final_epsilon": settings.final_epsilon,
            "quad_nodes": settings.quad_nodes,
            "adaptive_epsilon": adaptive_epsilon,
        },
        "failed_points": [int(i) for i in np.nonzero(~out.converged)[0]],
        "jump_flagged_points": [int(i) for i in np.nonzero(out.jump_flags)[0]],
    }
    dens = SpectralDensity(
        domain=SQUARED_SINGULAR,
        grid=grid[keep],
        rho=rho[keep],
        atoms=tuple(atoms),
        metadata=meta,
    )
    total = dens.total_mass()
    meta["total_mass"] = total
    if abs(total - 1.0) > 2e-2:
        warnings.warn(
            f"density mass {total:.4f} off by more than 2e-2; grid may not cover the support",
            stacklevel=2,
        )
    return dens


def theory_density(
    config: NetworkConfig,
    *,
    settings: SolverSettings | None = None,
    lam_min: float = 1e-4,
    lam_max: float | None = None,
    points: int = 600,
    adaptive_epsilon: bool = True,
) -> SpectralDensity:
    """Convenience wrapper: build a hybrid grid and solve the density.

    When lam_max is omitted it is set to 1.5x the exact second-moment-based
    edge guess max(4 m2, 4 m1), which covers every registry config's support
    comfortably without simulation input.
    """
    if lam_max is None:
        ms = jacobian_moments(config)
        lam_max = 1.5 * max(4.0 * ms.m2 / max(ms.m1, 1e-12), 4.0 * ms.m1, 1.0)
    grid = make_lambda_grid(lam_max, lam_min=lam_min, n=points)
    return density(config, grid, settings, adaptive_epsilon=adaptive_epsilon)
