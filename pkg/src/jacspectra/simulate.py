"""Monte Carlo ground truth: sample networks, extract Jacobian spectra.

A trial draws fresh weights and biases per layer, starts the input on the
sphere that puts the pre-activation variance exactly at its fixed point
(q^1 = q*), propagates, and accumulates the Jacobian as an explicit matrix
product D^L W^L ... D^1 W^1 followed by one SVD.

Randomness is counter-based: every (trial, layer, purpose) tuple maps to its
own Philox stream derived from the master seed, so results are independent
of execution order and identical under any parallel schedule.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .density import SINGULAR, SpectralDensity
from .ensembles import GAUSSIAN, ORTHOGONAL
from .errors import ConvergenceError
from .propagation import NetworkConfig, resolve_qstar

_PURPOSES = {"input": 0, "weights": 1, "bias": 2}
_ATOM_THRESHOLD = 1e-8
_OVERFLOW_GUARD = 1e100


def stream(seed: int, trial: int, layer: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream for one (trial, layer, purpose) tuple."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial, layer, _PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TrialStreams:
    """All randomness of one trial, addressed by layer and purpose."""

    seed: int
    trial: int

    def input(self) -> np.random.Generator:
        return stream(self.seed, self.trial, 0, "input")

    def layer(self, layer: int, purpose: str) -> np.random.Generator:
        return stream(self.seed, self.trial, layer, purpose)


@dataclass(frozen=True)
class EmpiricalSpectrum:
    singular_values: np.ndarray  # sorted ascending, pooled over trials
    width: int
    depth: int
    trials: int
    seed: int
    config: dict

    def __post_init__(self):
        sv = np.asarray(self.singular_values, dtype=float)
        if sv.size != self.width * self.trials:
            raise ValueError("expected width * trials singular values")
        if np.any(sv < 0) or np.any(np.diff(sv) < 0):
            raise ValueError("singular values must be sorted and nonnegative")

    def squared(self) -> np.ndarray:
        return self.singular_values**2

    def mean_squared(self) -> float:
        return float(np.mean(self.squared()))

    def var_squared(self) -> float:
        return float(np.var(self.squared()))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("s\n")
            fh.writelines(f"{float(v)!r}\n" for v in self.singular_values)

    def sidecar(self) -> dict:
        return {
            "width": self.width,
            "depth": self.depth,
            "trials": self.trials,
            "seed": self.seed,
            "config": self.config,
        }


def sample_orthogonal(n: int, sigma_w: float, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix scaled so W^T W = sigma_w^2 I.

    QR of a Gaussian matrix with the R-diagonal sign correction; without the
    correction the factorization is not unique and the law is not Haar.
    """
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return sigma_w * (q * d)


def sample_gaussian(n: int, sigma_w: float, rng: np.random.Generator) -> np.ndarray:
    """IID Gaussian matrix with entry variance sigma_w^2 / n."""
    return rng.standard_normal((n, n)) * (sigma_w / math.sqrt(n))


def _sample_weight(config: NetworkConfig, rng) -> np.ndarray:
    if config.ensemble.kind == ORTHOGONAL:
        return sample_orthogonal(config.width, config.sigma_w, rng)
    assert config.ensemble.kind == GAUSSIAN
    return sample_gaussian(config.width, config.sigma_w, rng)


def jacobian_singular_values(config: NetworkConfig, streams: TrialStreams) -> np.ndarray:
    """Singular values of the input-output Jacobian of one sampled network."""
    if config.width is None:
        raise ValueError("config.width is required for simulation")
    fp = resolve_qstar(config)
    if not fp.converged:
        raise ConvergenceError("fixed point unresolved for simulation", fp.qstar, fp.residual)
    n = config.width
    qstar = fp.qstar
    radius_sq = n * max(qstar - config.sigma_b**2, 0.0) / config.sigma_w**2
    u = streams.input().standard_normal(n)
    x = u * (math.sqrt(radius_sq) / np.linalg.norm(u)) if radius_sq > 0 else np.zeros(n)

    jac = np.eye(n)
    phi, dphi = config.activation.phi, config.activation.dphi
    for layer in range(1, config.depth + 1):
        w = _sample_weight(config, streams.layer(layer, "weights"))
        b = streams.layer(layer, "bias").standard_normal(n) * config.sigma_b
        h = w @ x + b
        if np.max(np.abs(h)) > _OVERFLOW_GUARD:
            raise FloatingPointError(f"pre-activations exceeded {_OVERFLOW_GUARD} at layer {layer}")
        jac = (np.asarray(dphi(h), dtype=float)[:, None] * w) @ jac
        x = np.asarray(phi(h), dtype=float)
    return np.sort(np.linalg.svd(jac, compute_uv=False))


def run_trials(
    config: NetworkConfig,
    trials: int,
    seed: int,
    *,
    threads: int | None = None,
) -> EmpiricalSpectrum:
    """Pool Jacobian singular values over independent trials.

    Trials are independent work units; results are merged by trial index so
    the outcome does not depend on the execution schedule.
    """
    def one(trial: int) -> np.ndarray:
        return jacobian_singular_values(config, TrialStreams(seed, trial))

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(t) for t in range(trials)]
    pooled = np.sort(np.concatenate(results))
    return EmpiricalSpectrum(
        singular_values=pooled,
        width=config.width,
        depth=config.depth,
        trials=trials,
        seed=seed,
        config={
            "activation": config.activation.name,
            "activation_params": dict(config.activation.params),
            "ensemble": config.ensemble.kind,
            "sigma_w": config.sigma_w,
            "sigma_b": config.sigma_b,
            "qstar": config.qstar,
        },
    )


def empirical_density(spectrum: EmpiricalSpectrum, bins=200) -> SpectralDensity:
    """Normalized histogram over singular values.

    Values below 1e-8 are pooled into a point mass at zero (exact kernel
    directions produce numerically-zero singular values).
    """
    sv = spectrum.singular_values
    tiny = sv <= _ATOM_THRESHOLD
    atom_mass = float(tiny.mean())
    body = sv[~tiny]
    atoms = ((0.0, atom_mass),) if atom_mass > 0 else ()
    if body.size == 0:
        grid = np.array([0.5, 1.0])
        return SpectralDensity(SINGULAR, grid, np.zeros(2), atoms, {"bins": 0})
    lo, hi = float(body.min()), float(body.max())
    if hi - lo < 1e-9 * (1.0 + hi):  # all mass at one spot (e.g. pure isometries)
        pad = max(1e-6, 1e-9 * (1.0 + hi))
        hist, edges = np.histogram(body, bins=bins, range=(lo - pad, hi + pad), density=True)
    else:
        hist, edges = np.histogram(body, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rho = hist * (1.0 - atom_mass)
    return SpectralDensity(
        domain=SINGULAR,
        grid=centers,
        rho=rho,
        atoms=atoms,
        metadata={"bins": int(np.size(hist)), "n_values": int(sv.size)},
    )


def ks_distance(spectrum: EmpiricalSpectrum, theory: SpectralDensity) -> float:
    """Two-sided sup distance between the empirical CDF and a theory CDF.

    The theory CDF combines the trapezoid of the continuum with atom steps.
    Sample values within a relative 1e-6 of a theory atom are snapped onto
    it (matrix intersections produce the atom locations only up to rounding).
    Evaluates both one-sided limits at every breakpoint, which handles atoms
    shared by both distributions exactly.
    """
    if theory.domain != SINGULAR:
        raise ValueError("theory density must live over singular values")
    total = theory.total_mass()
    if abs(total - 1.0) > 1e-2:
        warnings.warn(
            f"theory density mass {total:.4f} is off by more than 1e-2", stacklevel=2
        )
    sv = np.array(spectrum.singular_values, dtype=float)
    for loc, _ in theory.atoms:
        snap = np.abs(sv - loc) <= 1e-6 * (1.0 + abs(loc))
        sv[snap] = loc
    sv.sort()
    n = sv.size
    points = np.unique(np.concatenate([sv, theory.grid, [loc for loc, _ in theory.atoms]]))
    f_emp_right = np.searchsorted(sv, points, side="right") / n
    f_emp_left = np.searchsorted(sv, points, side="left") / n
    f_th_right = theory.cdf(points, side="right") / total
    f_th_left = theory.cdf(points, side="left") / total
    d = np.maximum(np.abs(f_emp_right - f_th_right), np.abs(f_emp_left - f_th_left))
    return float(d.max())
