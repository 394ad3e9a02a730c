"""Exact singular-value spectra of deep random-network Jacobians.

Solves the self-consistent resolvent equation for the depth-L Jacobian of a
randomly initialized fully connected network, evaluates the closed-form
infinite-depth limiting distributions, and cross-validates both against
Monte Carlo simulation.
"""

from .activations import ActivationSpec, bernoulli_p, d2_moments, get_activation, m_d2, mu_k
from .density import SpectralDensity, make_lambda_grid, to_singular_domain
from .ensembles import WeightEnsemble, gaussian, orthogonal, s_transform_weights
from .limits import (
    bernoulli_G,
    bernoulli_density,
    bernoulli_edges_atoms,
    smooth_G,
    smooth_density,
    smooth_edges,
)
from .master import SolverSettings, density, master_residual, probe_atom, solve_G_at
from .moments import MomentSummary, jacobian_moments, moments_from_density
from .propagation import (
    FixedPoint,
    NetworkConfig,
    chi,
    critical_config,
    critical_sigma_w,
    double_scaled_config,
    double_scaling_qstar,
    phase_grid,
    qstar_fixed_point,
    resolve_qstar,
)
from .simulate import (
    EmpiricalSpectrum,
    TrialStreams,
    empirical_density,
    jacobian_singular_values,
    ks_distance,
    run_trials,
    sample_gaussian,
    sample_orthogonal,
)
from .special import QuadratureRule, erf, erf_inv, gauss_normal_rule, lambert_w0, r_lambert

__version__ = "0.1.0"
