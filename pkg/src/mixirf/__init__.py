"""mixirf: asymptotically exact variational flows from involutive MCMC.

Build an invertible, target-preserving map on an augmented state space
from any involutive MCMC kernel, then mix pushforwards of a simple
reference through frozen sequences of those maps to obtain variational
families with tractable sampling and exact log-densities.
"""
from .targets import (Target, Grid2D, banana, funnel, cross, warped_gaussian,
                      std_normal, get_target, default_grid, quadrature_log_norm)
from .kernels import (InvolutiveKernel, AuxiliaryConditional, Involution,
                      rwmh_kernel, mala_kernel, hmc_kernel, get_kernel, mcmc_step)
from .irf import (AugmentedState, IrfParam, FrozenStream, irf_forward, irf_inverse,
                  forward_orbit, inverse_orbit, backward_process,
                  inverse_orbit_ratios, default_theta_star)
from .reference import MeanFieldGaussian, AugmentedReference, fit_advi
from .flows import (FlowSpec, flow_sample, flow_log_density, FlowDivergence,
                    uncorrected_flow_sample, uncorrected_flow_log_density)
from .estimators import (MetricReport, elbo, log_z_is, ess_per_sample,
                         tv_to_target, mcmc_ess, inversion_error_curve,
                         running_means, flow_log_weights)

__version__ = "0.1.0"
