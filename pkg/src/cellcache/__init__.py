"""Joint file-delivery-delay and power optimization for cache-enabled
small-cell networks: exact model, convex surrogate, Benders-style
decomposition with an optional SDR-accelerated master, reference policies,
and an experiment CLI."""

from .baselines import (OracleResult, PolicyResult, ccp_policy, df_policy,
                        exhaustive_oracle)
from .convex_approx import ApproxParams, LogPower, fit_params
from .exact_model import (Assignment, ModelReport, ObjectiveWeights,
                          check_feasibility, model_report, objective,
                          split_objective)
from .gbd_driver import GbdConfig, GbdResult, run_apuf, run_gbd
from .master_solver import (Cut, MasterInfeasible, MasterSolution,
                            best_placement, solve_master_exact, solve_sdr)
from .primal_solver import (FeasibilityCertificate, HardInfeasible,
                            Infeasible, PrimalSolution, solve_feasibility,
                            solve_primal)
from .scenario import (GenerationConfig, Scenario, generate_scenario,
                       scenario_from_json, scenario_to_json)

__version__ = "0.1.0"

__all__ = [
    "ApproxParams", "Assignment", "Cut", "FeasibilityCertificate",
    "GbdConfig", "GbdResult", "GenerationConfig", "HardInfeasible",
    "Infeasible", "LogPower", "MasterInfeasible", "MasterSolution",
    "ModelReport", "ObjectiveWeights", "OracleResult", "PolicyResult",
    "PrimalSolution", "Scenario", "best_placement", "ccp_policy",
    "check_feasibility", "df_policy", "exhaustive_oracle", "fit_params",
    "generate_scenario", "model_report", "objective", "run_apuf", "run_gbd",
    "scenario_from_json", "scenario_to_json", "solve_feasibility",
    "solve_master_exact", "solve_primal", "solve_sdr", "split_objective",
    "__version__",
]
