"""Oracle solution, nonparametric estimation and data-driven control for the
ergodic impulse-control (stochastic Faustmann) harvesting problem."""
__version__ = "0.1.0"

from ._backend import USE_NUMBA, backend_name
from .diffusion import (DiffusionModel, DriftClassParams, InvariantDensityOracle, SamplePath,
                        first_hitting_time, first_passage_times, invariant_density, simulate_path,
                        validate_class_membership, xi_oracle)
from .functions import FunctionSpec
from .problem import (Problem, RewardSpec, OracleSolution, load_problem, reward_rate_of_threshold,
                      solve_oracle)
from .estimation import (EPANECHNIKOV, ORDER3, KernelSpec, build_xi_estimate, estimate_threshold,
                         kernel_density_estimate, local_time_density_estimate)
from .control import (ControlledRun, ExplorationSchedule, ThresholdStrategy, average_reward, regret,
                      run_data_driven, run_threshold_strategy)
from .bench import ExperimentPlan, RateReport, fit_loglog_slope, run_experiment
from .catalog import get_problem
