import math

import numpy as np
import pytest

from jacspectra.density import (
    SINGULAR,
    SQUARED_SINGULAR,
    SpectralDensity,
    make_lambda_grid,
    read_csv,
    read_json,
    to_singular_domain,
)


def _uniform_density():
    grid = np.linspace(1e-9, 1.0, 2001)
    return SpectralDensity(SQUARED_SINGULAR, grid, np.ones_like(grid), (), {})


class TestContainer:
    def test_clamps_small_negative_noise(self):
        d = SpectralDensity(
            SQUARED_SINGULAR, np.array([0.0, 1.0]), np.array([-5e-9, 1.0]), (), {}
        )
        assert d.rho[0] == 0.0

    def test_rejects_large_negative(self):
        with pytest.raises(ValueError):
            SpectralDensity(SQUARED_SINGULAR, np.array([0.0, 1.0]), np.array([-1e-6, 1.0]))

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            SpectralDensity(SQUARED_SINGULAR, np.array([1.0, 0.5]), np.zeros(2))

    def test_rejects_bad_domain(self):
        with pytest.raises(ValueError):
            SpectralDensity("eigen", np.array([0.0, 1.0]), np.zeros(2))

    def test_cdf_sides_at_atom(self):
        d = SpectralDensity(
            SQUARED_SINGULAR, np.array([0.5, 2.0]), np.zeros(2), ((1.0, 0.6), (1.5, 0.4)), {}
        )
        assert d.cdf(1.0, side="right")[0] == pytest.approx(0.6)
        assert d.cdf(1.0, side="left")[0] == pytest.approx(0.0)
        assert d.cdf(1.5, side="right")[0] == pytest.approx(1.0)


class TestDomainChange:
    def test_atom_at_one_is_fixed(self):
        d = SpectralDensity(SQUARED_SINGULAR, np.array([0.5, 2.0]), np.zeros(2), ((1.0, 1.0),), {})
        s = to_singular_domain(d)
        assert s.atoms == ((1.0, 1.0),)

    def test_deep_limit_atom_location(self):
        lam2 = math.exp(0.25)
        d = SpectralDensity(
            SQUARED_SINGULAR, np.array([0.5, 2.0]), np.zeros(2), ((lam2, 0.75),), {}
        )
        s = to_singular_domain(d)
        assert s.atoms[0][0] == pytest.approx(math.exp(0.125), abs=1e-12)

    def test_uniform_change_of_variables(self):
        s = to_singular_domain(_uniform_density())
        assert s.domain == SINGULAR
        assert np.allclose(s.rho, 2.0 * s.grid, atol=1e-12)
        assert s.continuum_mass() == pytest.approx(1.0, abs=1e-5)

    def test_mass_preserved(self):
        d = _uniform_density()
        assert to_singular_domain(d).total_mass() == pytest.approx(d.total_mass(), abs=1e-5)

    def test_requires_lambda_domain(self):
        s = to_singular_domain(_uniform_density())
        with pytest.raises(ValueError):
            to_singular_domain(s)


class TestIO:
    def test_csv_round_trip(self, tmp_path):
        d = SpectralDensity(
            SQUARED_SINGULAR,
            np.array([0.1, 0.7, 1.9]),
            np.array([0.25, 0.5, 0.0]),
            ((0.0, 0.25),),
            {"note": "x"},
        )
        p = tmp_path / "d.csv"
        d.write_csv(p)
        back = read_csv(p)
        assert back.domain == d.domain
        assert np.array_equal(back.grid, d.grid)
        assert np.array_equal(back.rho, d.rho)
        assert back.atoms == d.atoms

    def test_csv_header(self, tmp_path):
        p = tmp_path / "d.csv"
        _uniform_density().write_csv(p)
        assert p.read_text().splitlines()[0] == "domain,x,rho"

    def test_json_round_trip(self, tmp_path):
        d = SpectralDensity(
            SQUARED_SINGULAR, np.array([0.1, 1.9]), np.array([0.5, 0.5]), ((2.0, 0.1),), {"a": 1}
        )
        p = tmp_path / "d.json"
        d.write_json(p)
        back = read_json(p)
        assert back.metadata == {"a": 1}
        assert back.atoms == d.atoms
        assert np.array_equal(back.grid, d.grid)

    def test_csv_bytes_stable(self, tmp_path):
        d = _uniform_density()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        d.write_csv(p1)
        d.write_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestGrid:
    def test_monotone_and_bounds(self):
        g = make_lambda_grid(5.0, lam_min=1e-4, n=600)
        assert np.all(np.diff(g) > 0)
        assert g[0] == pytest.approx(1e-4)
        assert g[-1] == pytest.approx(5.0)

    def test_resolves_origin(self):
        g = make_lambda_grid(5.0, lam_min=1e-8, n=600)
        assert (g < 1e-4).sum() > 50  # geometric half covers the bottom decades

    def test_validation(self):
        with pytest.raises(ValueError):
            make_lambda_grid(1.0, lam_min=2.0)
