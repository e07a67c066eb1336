"""Classical simulation suite for near-term linear-system solvers: a
state-vector simulator with Hadamard-test estimation and noise regimes, the
benchmark problem registry, variational/evolutionary/combination solvers, and
a reproducible experiment harness."""

from .ansatz import (
    AdiabaticAnsatz,
    ParamCircuit,
    adiabatic_ansatz,
    identity_init,
    layered_ansatz,
    random_shallow,
)
from .cost import (
    BudgetExhaustedError,
    CostBudget,
    CostError,
    CostKind,
    cost_global,
    cost_local,
    dense_cost,
    gradient,
)
from .cqs import (
    BreadthFirst,
    CqsState,
    FixedNodes,
    Heuristic,
    TreeNode,
    estimate_gram_and_q,
    heuristic_expand,
    run_cqs,
    run_lavqls,
    solve_alpha,
    solve_alpha_real,
)
from .eavqls import (
    FitnessWeights,
    GaConfig,
    Gene,
    Genome,
    fitness,
    parameter_search,
    removal,
    run_eavqls,
    speciate_and_select,
    topological_search,
)
from .experiments import ExperimentConfig, emit_plotdata, run_campaign, run_single
from .optimizers import OptimResult, OptimizerSpec, minimize, spsa_step
from .problems import (
    DenseOracle,
    LinearProblem,
    UnitaryTerm,
    assemble_dense,
    embed_hermitian,
    exact_solution,
    problem_from_json,
    registry_get,
)
from .sim import (
    Circuit,
    Gate,
    NoiseRegime,
    StateVector,
    apply_gate,
    hadamard_test,
    inner_product_exact,
    run_circuit,
    zero_state,
)
from .vqls import AdiabaticSchedule, VqlsRun, solve_aavqls, solve_vqls

__version__ = "0.1.0"
