"""Spectral density container with atoms, CDF evaluation, and CSV/JSON I/O.

A density lives either over squared singular values (lambda) or singular
values (s = sqrt(lambda)); the two are related by rho_s(s) = 2 s rho(s^2)
with atoms mapped location-wise, total mass preserved.

CSV layout (one file per density):

    domain,x,rho
    squared_singular,<x>,<rho>
    ...
    atom,<location>,<mass>

JSON mirrors carry the same data plus a metadata block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

SQUARED_SINGULAR = "squared_singular"
SINGULAR = "singular"

_CLAMP = 1e-8


@dataclass
class SpectralDensity:
    domain: str
    grid: np.ndarray
    rho: np.ndarray
    atoms: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.domain not in (SQUARED_SINGULAR, SINGULAR):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.grid.ndim != 1 or self.grid.shape != self.rho.shape:
            raise ValueError("grid and rho must be 1-D arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        low = self.rho.min(initial=0.0)
        if low < -_CLAMP:
            raise ValueError(f"density has negative values below -{_CLAMP}: min={low}")
        self.rho = np.maximum(self.rho, 0.0)
        self.atoms = tuple((float(a), float(m)) for a, m in self.atoms)
        for loc, mass in self.atoms:
            if loc < 0 or not 0.0 <= mass <= 1.0:
                raise ValueError(f"bad atom ({loc}, {mass})")

    # -- mass and moments ---------------------------------------------------

    def continuum_mass(self) -> float:
        return float(np.trapezoid(self.rho, self.grid))

    def atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    def total_mass(self) -> float:
        return self.continuum_mass() + self.atom_mass()

    # -- CDF ------------------------------------------------------------

    def _cum(self) -> np.ndarray:
        dx = np.diff(self.grid)
        seg = 0.5 * (self.rho[1:] + self.rho[:-1]) * dx
        return np.concatenate([[0.0], np.cumsum(seg)])

    def cdf(self, x, *, side: str = "right") -> np.ndarray:
        """Continuum trapezoid CDF plus atom steps.

        side="right" includes the mass of an atom located exactly at x;
        side="left" gives the limit from below.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.interp(x, self.grid, self._cum(), left=0.0)
        for loc, mass in self.atoms:
            if side == "right":
                out = out + mass * (x >= loc)
            else:
                out = out + mass * (x > loc)
        return out

    # -- domain change --------------------------------------------------

    def to_singular(self) -> "SpectralDensity":
        return to_singular_domain(self)

    # -- I/O --------------------------------------------------------------

    def write_csv(self, path) -> None:
        lines = ["domain,x,rho"]
        for x, r in zip(self.grid, self.rho):
            lines.append(f"{self.domain},{float(x)!r},{float(r)!r}")
        for loc, mass in self.atoms:
            lines.append(f"atom,{float(loc)!r},{float(mass)!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_json(self, path) -> None:
        doc = {
            "domain": self.domain,
            "grid": list(map(float, self.grid)),
            "rho": list(map(float, self.rho)),
            "atoms": [[loc, mass] for loc, mass in self.atoms],
            "metadata": self.metadata,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)


def read_csv(path) -> SpectralDensity:
    grid, rho, atoms = [], [], []
    domain = None
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "domain,x,rho":
            raise ValueError(f"unexpected density CSV header: {header.strip()!r}")
        for line in fh:
            tag, x, r = line.strip().split(",")
            if tag == "atom":
                atoms.append((float(x), float(r)))
            else:
                domain = tag
                grid.append(float(x))
                rho.append(float(r))
    if domain is None:
        raise ValueError("density CSV has no grid rows")
    return SpectralDensity(domain=domain, grid=np.array(grid), rho=np.array(rho), atoms=tuple(atoms))


def read_json(path) -> SpectralDensity:
    with open(path) as fh:
        doc = json.load(fh)
    return SpectralDensity(
        domain=doc["domain"],
        grid=np.array(doc["grid"], dtype=float),
        rho=np.array(doc["rho"], dtype=float),
        atoms=tuple((a, m) for a, m in doc["atoms"]),
        metadata=doc.get("metadata", {}),
    )


def to_singular_domain(density: SpectralDensity) -> SpectralDensity:
    """Map a squared-singular-value density to singular values s = sqrt(x)."""
    if density.domain != SQUARED_SINGULAR:
        raise ValueError("to_singular_domain expects a squared-singular-value density")
    s = np.sqrt(density.grid)
    rho_s = 2.0 * s * density.rho
    atoms = tuple((math.sqrt(loc), mass) for loc, mass in density.atoms)
    return SpectralDensity(
        domain=SINGULAR,
        grid=s,
        rho=rho_s,
        atoms=atoms,
        metadata=dict(density.metadata),
    )


def make_lambda_grid(lam_max: float, *, lam_min: float = 1e-4, n: int = 600) -> np.ndarray:
    """Hybrid grid: geometric spacing near zero, linear through the bulk.

    Resolves both the near-origin divergences of heavy-bottomed spectra and
    smooth bulk structure with the same point budget.
    """
    if not 0 < lam_min < lam_max:
        raise ValueError("need 0 < lam_min < lam_max")
    n_geo = n // 2
    geo = np.geomspace(lam_min, lam_max, n_geo)
    # interior linear points ride at an irrational fraction of the spacing so
    # the grid cannot collide exactly with round-number spectral edges, where
    # the smoothed readout of a hard edge diverges like 1/sqrt(eps)
    n_lin = n - n_geo
    step = (lam_max - lam_min) / n_lin
    lin = lam_min + step * (np.arange(n_lin) + 0.5 * (math.sqrt(5.0) - 1.0))
    grid = np.unique(np.concatenate([geo, lin, [lam_max]]))
    return grid
