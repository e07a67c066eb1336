"""Variational solver loops: the plain feedback loop and the discrete
adiabatic sweep that interpolates the problem matrix from the identity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ansatz import AdiabaticAnsatz, ParamCircuit
from .cost import (
    BudgetExhaustedError,
    CostBudget,
    CostKind,
    CostParts,
    cost_parts,
    gradient,
    plan_for,
)
from .optimizers import OptimResult, OptimizerSpec, minimize
from .problems import LinearProblem, UnitaryTerm, assemble_dense, exact_solution
from .sim import StateVector, run_circuit, zero_state


@dataclass
class VqlsRun:
    problem: LinearProblem
    ansatz: ParamCircuit | AdiabaticAnsatz
    cost_kind: CostKind
    optimizer: OptimizerSpec
    budget: CostBudget
    x0: np.ndarray

    def __post_init__(self):
        if self.ansatz.n_qubits != self.problem.n_qubits:
            raise ValueError("ansatz width must equal problem width")


@dataclass
class VqlsResult:
    opt: OptimResult
    solution: StateVector
    fidelity: float | None
    raw_trace: list[float] = field(default_factory=list)
    notes: dict = field(default_factory=dict)


def _solution_fidelity(problem: LinearProblem, state: StateVector) -> float | None:
    try:
        exact = exact_solution(assemble_dense(problem))
    except Exception:
        return None
    return float(abs(np.vdot(exact.amplitudes, state.amplitudes)) ** 2)


class _CostDriver:
    """Objective closure: records raw values, clamps for sampled regimes, and
    caches (T, D) parts so gradient calls can reuse the base point."""

    def __init__(self, problem, ansatz, kind: CostKind, rng):
        self.problem = problem
        self.ansatz = ansatz
        self.kind = kind
        self.rng = rng
        self.plan = plan_for(problem, kind.kind)
        self.raw_trace: list[float] = []
        self._parts_cache: dict[bytes, CostParts] = {}

    def __call__(self, params: np.ndarray) -> float:
        parts = self.plan.evaluate(self.ansatz.bind(params), self.kind.regime, self.rng)
        self._parts_cache = {np.asarray(params, float).tobytes(): parts}
        self.raw_trace.append(parts.raw)
        if self.kind.regime.sampled:
            return min(max(parts.raw, 0.0), 1.0)
        return parts.raw

    def gradient_fn(self, budget: CostBudget):
        def grad(params: np.ndarray) -> np.ndarray:
            base = self._parts_cache.get(np.asarray(params, float).tobytes())
            return gradient(self.problem, self.ansatz, params, self.kind, budget,
                            rng=self.rng, base_parts=base)
        return grad


def solve_vqls(run: VqlsRun, rng: np.random.Generator | None = None) -> VqlsResult:
    """Optimize the cost over the ansatz parameters and prepare the solution.

    The noise RNG defaults to a generator seeded from the regime; pass one
    explicitly to chain several solves on a single stream.
    """
    if rng is None and run.cost_kind.regime.sampled:
        rng = run.cost_kind.regime.make_rng()
    driver = _CostDriver(run.problem, run.ansatz, run.cost_kind, rng)
    grad_fn = driver.gradient_fn(run.budget) if run.optimizer.kind == "bfgs" else None
    opt = minimize(driver, run.x0, run.optimizer, run.budget, gradient=grad_fn)
    solution = run_circuit(run.ansatz.bind(opt.best_params), zero_state(run.problem.n_qubits))
    return VqlsResult(opt, solution, _solution_fidelity(run.problem, solution),
                      raw_trace=driver.raw_trace)


# ---------------------------------------------------------------------------
# Adiabatic sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdiabaticSchedule:
    """T discrete interpolation steps; s_bar takes the values k/T for k = 0..T.

    When built from a total budget, the integer-division remainder goes to the
    last step so arms with different T consume equal totals.
    """

    t_steps: int
    per_step_budget: int
    last_step_extra: int = 0

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError("need at least one interpolation step")
        if self.per_step_budget < 1:
            raise ValueError("per-step budget must be positive")

    @classmethod
    def from_total(cls, t_steps: int, total_budget: int) -> "AdiabaticSchedule":
        per = total_budget // t_steps
        return cls(t_steps, per, total_budget - per * t_steps)

    def step_budget(self, k: int) -> int:
        return self.per_step_budget + (self.last_step_extra if k == self.t_steps else 0)


@dataclass
class AavqlsStepRow:
    step: int
    s_bar: float
    cost_before: float
    cost_after: float
    evals_used: int


@dataclass
class AavqlsResult:
    final: OptimResult
    solution: StateVector
    fidelity: float | None
    steps: list[AavqlsStepRow]
    raw_trace: list[float]
    total_evals: int


def interpolated_problem(problem: LinearProblem, s_bar: float) -> LinearProblem:
    """(1 - s_bar) * identity + s_bar * A as a term list.

    The identity term merges with an existing all-I term by coefficient
    addition; zero-coefficient terms are dropped, so s_bar = 1 reproduces the
    original problem exactly.
    """
    identity_factors = "I" * problem.n_qubits
    terms: list[UnitaryTerm] = []
    identity_coeff = complex(1.0 - s_bar)
    for t in problem.terms:
        scaled = complex(s_bar) * t.coefficient
        if t.factors == identity_factors:
            identity_coeff += scaled
        else:
            terms.append(UnitaryTerm(scaled, t.factors))
    if identity_coeff != 0:
        terms.insert(0, UnitaryTerm(identity_coeff, identity_factors))
    terms = [t for t in terms if t.coefficient != 0]
    interp_id = f"{problem.id}@s={s_bar:g}" if problem.id else None
    return LinearProblem(problem.n_qubits, tuple(terms), problem.b_prep, id=interp_id)


def solve_aavqls(problem: LinearProblem, ansatz: AdiabaticAnsatz,
                 schedule: AdiabaticSchedule, optimizer: OptimizerSpec,
                 cost_kind: CostKind,
                 rng: np.random.Generator | None = None) -> AavqlsResult:
    """Discrete adiabatic sweep: optimize at each s_bar, warm-starting from the
    previous optimum. Step 0 only records the exact-identity boundary cost
    (charged against step 1's budget, keeping the total at most
    T * per_step_budget evaluations).
    """
    params = ansatz.identity_point()
    if rng is None and cost_kind.regime.sampled:
        rng = cost_kind.regime.make_rng()

    steps: list[AavqlsStepRow] = []
    raw_trace: list[float] = []
    total_evals = 0
    final_opt: OptimResult | None = None
    t_steps = schedule.t_steps

    step0_cost: float | None = None
    for k in range(1, t_steps + 1):
        s_bar = k / t_steps
        interp = interpolated_problem(problem, s_bar)
        budget = CostBudget(schedule.step_budget(k))
        driver = _CostDriver(interp, ansatz, cost_kind, rng)
        if k == 1:
            budget.charge(1)
            zero_interp = interpolated_problem(problem, 0.0)
            zero_parts = cost_parts(zero_interp, ansatz.bind(params), cost_kind.kind,
                                    cost_kind.regime, rng)
            step0_cost = zero_parts.raw
            raw_trace.append(step0_cost)
            steps.append(AavqlsStepRow(0, 0.0, step0_cost, step0_cost, 1))
        budget.charge(1)
        before_parts = cost_parts(interp, ansatz.bind(params), cost_kind.kind,
                                  cost_kind.regime, rng)
        cost_before = before_parts.raw
        raw_trace.append(cost_before)

        grad_fn = driver.gradient_fn(budget) if optimizer.kind == "bfgs" else None
        try:
            opt = minimize(driver, params, optimizer, budget, gradient=grad_fn)
        except BudgetExhaustedError:
            # boundary evaluations consumed the whole step; keep the warm start
            opt = OptimResult(np.array(params), cost_before, [], "Budget")
        raw_trace.extend(driver.raw_trace)
        if opt.best_cost <= cost_before:
            params = np.asarray(opt.best_params, dtype=float)
            cost_after = opt.best_cost
        else:
            cost_after = cost_before
        steps.append(AavqlsStepRow(k, s_bar, cost_before, cost_after, budget.evals_used))
        total_evals += budget.evals_used
        final_opt = OptimResult(np.array(params), cost_after, opt.trace, opt.terminated_by)

    solution = run_circuit(ansatz.bind(params), zero_state(problem.n_qubits))
    return AavqlsResult(final_opt, solution, _solution_fidelity(problem, solution),
                        steps, raw_trace, total_evals)


def steps_to_csv_rows(steps: list[AavqlsStepRow]) -> list[dict]:
    return [
        {"step": s.step, "s_bar": s.s_bar, "cost_before": s.cost_before,
         "cost_after": s.cost_after, "evals_used": s.evals_used}
        for s in steps
    ]
