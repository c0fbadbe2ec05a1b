"""Event-driven simulator and analysis toolkit for the constrained lattice
gas: an exclusion process where only particles with an occupied neighbour
may jump.  See README.md for the module map and the CLI."""

from .lattice import (Geometry, Configuration, ActiveEdgeSet, NeighborList,
                      UsageError, neighbors, is_active, activity_field,
                      allowed_jumps, apply_jump)
from .dynamics import (BoundarySpec, SimulationState, Event, kmc_step,
                       run_until, absorption_time, initial_condition,
                       save_checkpoint, load_checkpoint, numpy_rng)
from .exact1d import (ExactOneDim, exact_observables, exact_correlation,
                      exact_exponents, sample_pi_rho, marginal_probability,
                      enumerate_marginal)
from .exponents import (ExponentSet, PowerLawFit, log_log_fit, numerical_d,
                        xi_cross_fit, xi_perp_crossover,
                        xi_perp_hidden_density, relation_check)

__version__ = "0.1.0"
