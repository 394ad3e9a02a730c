import math

import numpy as np
import pytest

from jacspectra.activations import get_activation, mu_k, phi_sq_mean
from jacspectra.errors import ActivationClassError
from jacspectra.propagation import (
    NetworkConfig,
    chi,
    critical_sigma_w,
    double_scaling_qstar,
    fixed_point_is_degenerate,
    phase_grid,
    qstar_fixed_point,
)
from jacspectra.special import erf_inv


class TestFixedPoint:
    def test_linear_affine_solution(self):
        fp = qstar_fixed_point(get_activation("linear"), 0.9, 0.3)
        assert fp.converged
        assert fp.qstar == pytest.approx(0.09 / 0.19, abs=1e-10)

    def test_relu_forced_value(self):
        fp = qstar_fixed_point(get_activation("relu"), 1.0, 0.5)
        assert fp.converged
        assert fp.qstar == pytest.approx(0.5, abs=1e-10)

    def test_tanh_brute_force_oracle(self, oracles):
        fp = qstar_fixed_point(get_activation("tanh"), 1.5, 0.1)
        assert fp.converged
        assert fp.qstar == pytest.approx(oracles["tanh_qstar_sw1p5_sb0p1"], abs=1e-9)

    @pytest.mark.parametrize(
        "name,sw,sb",
        [("tanh", 1.5, 0.1), ("hard_tanh", 1.2, 0.4), ("erf_main", 1.3, 0.2), ("silu", 0.9, 0.5)],
    )
    def test_self_consistency_residual(self, name, sw, sb):
        act = get_activation(name)
        fp = qstar_fixed_point(act, sw, sb)
        assert fp.converged
        mapped = sw * sw * phi_sq_mean(act, fp.qstar) + sb * sb
        assert abs(fp.qstar - mapped) <= 1e-12 * (1 + fp.qstar)
        assert fp.chi == pytest.approx(sw * sw * mu_k(act, fp.qstar, 1), abs=1e-12)

    def test_divergence_flag(self):
        fp = qstar_fixed_point(get_activation("linear"), 2.0, 1.0, max_iter=2000)
        assert not fp.converged


class TestChi:
    def test_linear(self):
        assert chi(get_activation("linear"), 1.0, 3.3) == pytest.approx(1.0, abs=1e-14)

    def test_relu_critical(self):
        assert chi(get_activation("relu"), math.sqrt(2), 0.7) == pytest.approx(1.0, abs=1e-14)

    def test_erf_critical_scaling(self):
        q = 0.8
        sw = (1 + math.pi * q) ** 0.25
        assert chi(get_activation("erf_main"), sw, q) == pytest.approx(1.0, abs=1e-12)


class TestCriticalLine:
    def test_relu(self):
        sw, _ = critical_sigma_w(get_activation("relu"), 0.0)
        assert sw == pytest.approx(math.sqrt(2), abs=1e-6)

    def test_linear(self):
        sw, _ = critical_sigma_w(get_activation("linear"), 0.0)
        assert sw == pytest.approx(1.0, abs=1e-6)

    def test_hard_tanh_grid_oracle(self, oracles):
        sw, q = critical_sigma_w(get_activation("hard_tanh"), 0.2)
        assert sw == pytest.approx(oracles["htanh_critical_sw_sb0p2"], abs=1e-8)
        assert q == pytest.approx(oracles["htanh_critical_qstar_sb0p2"], abs=1e-8)

    @pytest.mark.parametrize("name,sb", [("hard_tanh", 0.1), ("erf_main", 0.3), ("tanh", 0.2)])
    def test_round_trip_chi_is_one(self, name, sb):
        act = get_activation(name)
        sw, q = critical_sigma_w(act, sb)
        assert chi(act, sw, q) == pytest.approx(1.0, abs=1e-10)


class TestDoubleScaling:
    def test_hard_tanh_closed_form(self):
        q, sw = double_scaling_qstar(get_activation("hard_tanh"), 1024, 0.25)
        expected = 1.0 / (2.0 * erf_inv(1024.0 / 1024.25) ** 2)
        assert q == pytest.approx(expected, abs=1e-9)
        assert sw * sw * mu_k(get_activation("hard_tanh"), q, 1) == pytest.approx(1.0, abs=1e-10)

    def test_erf_sm_quadratic_root_oracle(self, oracles):
        q, sw = double_scaling_qstar(get_activation("erf_sm"), 100, 0.25)
        assert q == pytest.approx(oracles["erf_sm_double_scaling_L100_s0p25"], abs=1e-12)
        assert sw * sw == pytest.approx(math.sqrt(1 + 2 * q), abs=1e-12)

    def test_variance_residual_invariant(self):
        act = get_activation("erf_sm")
        for L in (8, 128, 2048):
            q, sw = double_scaling_qstar(act, L, 0.5)
            ratio = mu_k(act, q, 2) / mu_k(act, q, 1) ** 2
            assert L * (ratio - 1.0) == pytest.approx(0.5, rel=1e-8)
            assert sw * sw * mu_k(act, q, 1) == pytest.approx(1.0, abs=1e-10)

    def test_relu_scale_degenerate(self):
        with pytest.raises(ActivationClassError):
            double_scaling_qstar(get_activation("relu"), 8, 0.25)

    @pytest.mark.parametrize("name", ["hard_tanh", "erf_main"])
    def test_monotone_in_depth(self, name):
        act = get_activation(name)
        depths = [2**k for k in range(1, 13)]
        qs, sws = zip(*(double_scaling_qstar(act, L, 0.25) for L in depths))
        assert np.all(np.diff(qs) < 0)
        # q* -> 0 and sigma_w -> 1, slowly (logarithmic for saturating units)
        assert qs[-1] < qs[0] / 3
        assert abs(sws[-1] - 1.0) < abs(sws[0] - 1.0) / 3


class TestPhaseGrid:
    def test_linear_critical_cell(self):
        grid = phase_grid(get_activation("linear"), [0.5, 1.0], [0.0, 0.3])
        rows = {(sw, sb): (q, c, ok) for sw, sb, q, c, ok in grid.rows()}
        q, c, ok = rows[(1.0, 0.0)]
        assert c == pytest.approx(1.0, abs=1e-12)

    def test_tanh_phases(self):
        grid = phase_grid(get_activation("tanh"), [0.5, 2.0], [0.5])
        rows = {(sw, sb): c for sw, sb, q, c, ok in grid.rows()}
        assert rows[(2.0, 0.5)] > 1.0  # chaotic side
        assert rows[(0.5, 0.5)] < 1.0  # ordered side

    def test_all_cells_flagged(self):
        grid = phase_grid(get_activation("tanh"), [0.8, 1.2], [0.1, 0.2])
        assert grid.converged.shape == (4,)
        assert grid.converged.all()


class TestDegeneracy:
    def test_linear_at_unit_point(self):
        assert fixed_point_is_degenerate(get_activation("linear"), 1.0, 0.0)

    def test_relu_at_critical_point(self):
        assert fixed_point_is_degenerate(get_activation("relu"), math.sqrt(2), 0.0)

    def test_hard_tanh_not_degenerate(self):
        assert not fixed_point_is_degenerate(get_activation("hard_tanh"), 1.0, 0.0)


class TestNetworkConfig:
    def test_validation(self):
        from jacspectra.ensembles import orthogonal

        act = get_activation("linear")
        with pytest.raises(ValueError):
            NetworkConfig(act, orthogonal(1.0), 1.0, 0.0, depth=0)
        with pytest.raises(ValueError):
            NetworkConfig(act, orthogonal(1.0), 1.0, -0.1, depth=2)
        with pytest.raises(ValueError):
            NetworkConfig(act, orthogonal(1.0), 1.0, 0.0, depth=2, width=1)
        with pytest.raises(ValueError):
            NetworkConfig(act, orthogonal(2.0), 1.0, 0.0, depth=2)
