import cmath
import math

import numpy as np
import pytest

from jacspectra.activations import get_activation
from jacspectra.errors import PoleError
from jacspectra.limits import (
    bernoulli_G,
    bernoulli_density,
    bernoulli_edges_atoms,
    smooth_G,
    smooth_density,
    smooth_edges,
    smooth_s_edges,
)
from jacspectra.master import solve_G_at
from jacspectra.propagation import double_scaled_config


def _rho_bernoulli(s0sq, lam):
    return max(-bernoulli_G(s0sq, lam * (1 + 1e-9j)).imag / math.pi, 0.0)


def _bernoulli_mass_profile(s0sq, u_max=500.0, n=6000):
    """Continuum mass/moments of the deep {0,1}-slope limit.

    Two substitutions handle the integrable singularities: near the right
    edge lam1 a square-root variable v = sqrt(lam1 - lam) absorbs the
    edge divergence (which appears when the point mass at exp(s0sq) fades
    into the bulk at s0sq -> 1); toward the origin, where the density falls
    like 1/(lam log^2 lam), a log grid u = log(s0sq/lam) runs out to u_max
    with leftover tail ~ s0sq/u_max.
    """
    lam1 = math.e * s0sq
    cut = 0.5 * lam1
    moments = np.zeros(3)
    v = np.linspace(0.0, math.sqrt(lam1 - cut), n // 2)[1:]
    lam = lam1 - v * v
    rho = np.array([_rho_bernoulli(s0sq, l) for l in lam])
    for k in range(3):
        moments[k] += np.trapezoid(rho * lam**k * 2.0 * v, v)
    u = np.linspace(math.log(s0sq / cut), u_max, n)
    lam = s0sq * np.exp(-u)
    rho = np.array([_rho_bernoulli(s0sq, l) for l in lam])
    for k in range(3):
        moments[k] += np.trapezoid(rho * lam ** (k + 1), u)
    return tuple(moments)


class TestBernoulliG:
    def test_zero_variance_collapses_to_unit_atom(self):
        assert bernoulli_G(1e-12, 2.0) == pytest.approx(1.0, abs=1e-9)

    def test_pole_at_origin(self):
        with pytest.raises(PoleError):
            bernoulli_G(0.25, 0.0)

    def test_edge_behavior(self):
        lam1 = math.e * 0.25
        below = -bernoulli_G(0.25, (lam1 - 0.05) + 1e-9j).imag / math.pi
        above = -bernoulli_G(0.25, (lam1 + 0.05) + 1e-9j).imag / math.pi
        assert below > 0.05
        assert above <= 1e-6

    def test_deep_master_solve_cross_check(self):
        cfg = double_scaled_config(get_activation("hard_tanh"), 4096, 0.25)
        for lam in (0.1, 0.4, 3.0):
            g_lim = bernoulli_G(0.25, lam + 1e-6j)
            g_mas = solve_G_at(cfg, lam)
            assert abs(g_lim - g_mas) <= 2e-3 * (1 + abs(g_lim))

    def test_limit_transform_composition(self):
        # plugging M = zG - 1 into the deep-limit multiplicative transform
        # S(m) = exp(-m s0sq/(1+m)) must reproduce z: (1+M)/(M S(M)) = z
        s0sq = 0.25
        rng = np.random.default_rng(12)
        count = 0
        while count < 100:
            z = complex(rng.uniform(-3, 4), rng.uniform(0.2, 3))
            m = z * bernoulli_G(s0sq, z) - 1.0
            if abs(m) < 1e-3 or abs(1 + m) < 1e-3:
                continue
            s = cmath.exp(-m * s0sq / (1.0 + m))
            assert abs((1.0 + m) / (m * s) - z) <= 1e-8 * abs(z)
            count += 1


class TestBernoulliEdgesAtoms:
    def test_sigma_half_edges(self):
        info = bernoulli_edges_atoms(0.25)
        assert math.sqrt(info["lambda1"]) == pytest.approx(math.sqrt(math.e) / 2, abs=1e-12)
        assert math.sqrt(info["lambda2"]) == pytest.approx(math.exp(0.125), abs=1e-12)

    def test_atom_mass_is_one_minus_variance(self):
        info = bernoulli_edges_atoms(0.25)
        atoms = dict(info["atoms"])
        assert atoms[info["lambda2"]] == pytest.approx(0.75, abs=1e-6)
        assert 0.0 not in atoms  # origin divergence is integrable, not a point mass

    def test_small_variance_limit(self):
        info = bernoulli_edges_atoms(1e-3)
        assert info["lambda1"] == pytest.approx(math.e * 1e-3)
        assert info["lambda2"] == pytest.approx(1.0, abs=2e-3)
        assert dict(info["atoms"])[info["lambda2"]] == pytest.approx(1.0, abs=2e-3)

    def test_no_top_atom_beyond_unit_sigma(self):
        info = bernoulli_edges_atoms(1.44)
        assert all(loc != info["lambda2"] for loc, _ in info["atoms"])

    def test_normalization_with_continuum(self):
        info = bernoulli_edges_atoms(0.25)
        mass, _, _ = _bernoulli_mass_profile(0.25)
        total = mass + sum(m for _, m in info["atoms"])
        assert total == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("s0sq", [0.1, 0.25, 1.0])
    def test_first_two_moments(self, s0sq):
        info = bernoulli_edges_atoms(s0sq)
        mass, m1, m2 = _bernoulli_mass_profile(s0sq)
        atom = sum(m for _, m in info["atoms"])
        atom1 = sum(m * loc for loc, m in info["atoms"])
        atom2 = sum(m * loc * loc for loc, m in info["atoms"])
        assert m1 + atom1 == pytest.approx(1.0, abs=1e-3)
        assert m2 + atom2 == pytest.approx(1.0 + s0sq, abs=1e-3)


class TestSmoothG:
    def test_zero_variance_collapses_to_unit_atom(self):
        assert smooth_G(1e-12, 2.0) == pytest.approx(1.0, abs=1e-9)

    def test_stieltjes_asymptotics(self):
        assert abs(smooth_G(0.25, 1e4) - 1e-4) <= 1e-3

    def test_deep_master_solve_cross_check(self):
        cfg = double_scaled_config(get_activation("erf_sm"), 8192, 0.25)
        g_lim = smooth_G(0.25, 1.0 + 1e-6j)
        g_mas = solve_G_at(cfg, 1.0)
        # depth-8192 sits within its 1/sqrt(L) envelope of the limit
        assert abs(g_lim - g_mas) <= 2e-2 * (1 + abs(g_lim))

    def test_moments(self):
        for s0sq in (0.1, 0.25, 1.0):
            lo, hi = smooth_edges(s0sq)
            lam = np.linspace(lo, hi, 8001)
            rho = np.clip(
                [-smooth_G(s0sq, l + 1e-9j).imag / math.pi for l in lam], 0.0, None
            )
            assert np.trapezoid(rho, lam) == pytest.approx(1.0, abs=1e-3)
            assert np.trapezoid(rho * lam, lam) == pytest.approx(1.0, abs=1e-3)
            assert np.trapezoid(rho * lam * lam, lam) == pytest.approx(1.0 + s0sq, abs=1e-3)


class TestSmoothEdges:
    def test_sigma_half_values(self):
        lo, hi = smooth_s_edges(0.25)
        assert lo == pytest.approx(0.57, abs=5e-3)
        assert hi == pytest.approx(1.56, abs=5e-3)

    def test_zero_variance_limit(self):
        lo, hi = smooth_s_edges(1e-8)
        assert lo == pytest.approx(1.0, abs=1e-3)
        assert hi == pytest.approx(1.0, abs=1e-3)

    def test_support_detection_at_unit_sigma(self):
        s0sq = 1.0
        lo, hi = smooth_edges(s0sq)
        lam = np.linspace(lo * 0.8, hi * 1.1, 3000)
        rho = np.clip([-smooth_G(s0sq, l + 1e-9j).imag / math.pi for l in lam], 0.0, None)
        pos = lam[rho > 1e-3]
        assert pos[0] == pytest.approx(lo, abs=1e-2)
        assert pos[-1] == pytest.approx(hi, abs=1e-2)

    def test_two_edge_formulations_agree(self):
        # sqrt of the endpoint values equals the singular-domain edge formula
        for s0sq in np.linspace(0.05, 4.0, 25):
            lo, hi = smooth_edges(float(s0sq))
            s_lo, s_hi = smooth_s_edges(float(s0sq))
            assert math.sqrt(lo) == pytest.approx(s_lo, abs=1e-12)
            assert math.sqrt(hi) == pytest.approx(s_hi, abs=1e-12)


class TestLimitDensities:
    def test_bernoulli_density_container(self):
        grid = np.geomspace(1e-8, 1.3, 800)
        d = bernoulli_density(0.25, grid)
        assert d.atoms and d.atoms[0][0] == pytest.approx(math.exp(0.25))
        assert d.metadata["class"] == "bernoulli"

    def test_smooth_density_container(self):
        lo, hi = smooth_edges(0.25)
        d = smooth_density(0.25, np.linspace(lo, hi, 500))
        assert not d.atoms
        assert d.continuum_mass() == pytest.approx(1.0, abs=5e-3)
