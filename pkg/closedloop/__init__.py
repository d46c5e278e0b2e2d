import logging

logging.getLogger(__name__).addHandler(logging.NullHandler())

from .utils import enable_verbose
from .errors import ClosedLoopError

# Distributions and decision maps
from .distmap import (
    DecisionMap,
    Dirac,
    FiniteSupport,
    Gaussian1D,
    ProductDistribution,
    estimate_tau,
    w1,
)

# Operators and problems
from .operators import (
    ClosedLoopProblem,
    MonotoneOracle,
    RandomField,
    UniformModulus,
    closed_loop_field,
    gap_e,
    theta,
    theta_inv,
)

# Experiments
from .equilibrium import repeated_minimization, solve_inner
from .flow1 import check_speed_bounds, integrate_smi, w1_decay_report
from .flow2 import ISEHDConfig, check_damping_condition, check_lyapunov_decay, integrate_isehd, lyapunov_trace
from .curvature import RandomWalkSpace, invariant_measure, ricci_global, ricci_kappa, tau_kappa_table, verify_contraction
from .primaldual import SaddleInstance, check_pd_decay, integrate_ispds, integrate_spds, pd_equilibrium

# Scenarios
from .load_config import ConfigLoader, ScenarioConfig, validate_config
from .runner import run_scenario
