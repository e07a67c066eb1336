"""Global and local solver costs assembled from Hadamard-test estimates.

Both costs have the form C = 1 - T/D with D = <psi|psi> for |psi> = A|x>:
the global T is |<b|psi>|^2; the local T tracks the per-qubit projector sum.
Every ingredient <x|A_l^dag P A_l'|x> is estimated by ancilla Hadamard tests;
only the upper triangle of each term-pair family is measured, the lower half
follows by conjugation. A dense-matrix backend provides the cross-check path.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .ansatz import AdiabaticAnsatz, ParamCircuit
from .problems import LinearProblem, assemble_dense
from .sim import (
    Circuit,
    Gate,
    HadamardTestEstimator,
    NoiseRegime,
    StateVector,
    circuit_to_matrix,
    zero_state,
)

logger = logging.getLogger(__name__)

DENOM_FLOOR = 1e-9
FD_FALLBACK_STEP = 1e-4
SHIFT = np.pi / 2.0


class CostError(RuntimeError):
    """Cost evaluation failed (e.g. vanishing denominator)."""


class BudgetExhaustedError(RuntimeError):
    """An evaluation was requested beyond the budget's limit."""


@dataclass(frozen=True)
class CostKind:
    """Which cost to optimize and under which estimation regime."""

    kind: str
    regime: NoiseRegime

    def __post_init__(self):
        if self.kind not in ("global", "local"):
            raise ValueError(f"cost kind must be 'global' or 'local', got {self.kind!r}")


@dataclass
class CostBudget:
    """Evaluation allowance shared by a solver run.

    A gradient call is charged GRADIENT_EVALS_PER_PARAM evaluations per
    parameter. The counter update is lock-protected so concurrent evaluations
    within one run cannot overdraw.
    """

    max_evals: int
    evals_used: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    GRADIENT_EVALS_PER_PARAM = 2

    @property
    def remaining(self) -> int:
        return self.max_evals - self.evals_used

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if self.evals_used + n > self.max_evals:
                raise BudgetExhaustedError(
                    f"budget exhausted: {self.evals_used}/{self.max_evals} used, {n} requested"
                )
            self.evals_used += n


class CostParts(NamedTuple):
    raw: float
    numerator_t: float
    denominator: float


# ---------------------------------------------------------------------------
# Test plan
# ---------------------------------------------------------------------------

def _z_circuit(n: int, j: int) -> Circuit:
    return Circuit(n, (Gate("z", (j,)),))


class CostPlan:
    """Hadamard-test schedule and assembly map for one (problem, kind).

    Static tests take the ansatz state as prep; the global cost appends overlap
    tests with an empty prep whose probes embed the ansatz circuit. Test values
    are p0 - p1 estimates in plan order.
    """

    def __init__(self, problem: LinearProblem, kind: str):
        self.problem = problem
        self.kind = kind
        n = problem.n_qubits
        m = len(problem.terms)
        terms = [t.circuit(n) for t in problem.terms]
        b_inv = problem.b_prep.inverse()

        tests: list[tuple[Circuit, str]] = []
        self._beta: dict[tuple[int, int], tuple[int, int | None]] = {}
        for l in range(m):
            for lp in range(l, m):
                probe = terms[lp] + terms[l]
                i_re = len(tests)
                tests.append((probe, "real"))
                i_im = None
                if lp != l:
                    i_im = len(tests)
                    tests.append((probe, "imag"))
                self._beta[(l, lp)] = (i_re, i_im)

        self._gamma: dict[tuple[int, int, int], tuple[int, int | None]] = {}
        if kind == "local":
            for j in range(n):
                zj = _z_circuit(n, j)
                for l in range(m):
                    for lp in range(l, m):
                        probe = terms[lp] + b_inv + zj + problem.b_prep + terms[l]
                        i_re = len(tests)
                        tests.append((probe, "real"))
                        i_im = None
                        if lp != l:
                            i_im = len(tests)
                            tests.append((probe, "imag"))
                        self._gamma[(l, lp, j)] = (i_re, i_im)

        self.static_tests = tuple(tests)
        self._terms = terms
        self._b_inv = b_inv
        self.n_static = len(tests)
        self.n_overlap = 2 * m if kind == "global" else 0

    @property
    def n_tests(self) -> int:
        return self.n_static + self.n_overlap

    def overlap_tests(self, x_prep: Circuit) -> list[tuple[Circuit, str]]:
        """Tests for <b|A_l|x> = <0| U^dag A_l V |0>, measured with empty prep."""
        out = []
        for term in self._terms:
            probe = x_prep + term + self._b_inv
            out.append((probe, "real"))
            out.append((probe, "imag"))
        return out

    def _pair_sum(self, values, index, extra=()) -> float:
        """sum_{l,l'} conj(c_l) c_l' E_{l l'} using the measured upper triangle."""
        coeffs = [t.coefficient for t in self.problem.terms]
        total = 0.0 + 0.0j
        m = len(coeffs)
        for l in range(m):
            for lp in range(l, m):
                i_re, i_im = index[(l, lp) + tuple(extra)]
                est = values[i_re] + (1j * values[i_im] if i_im is not None else 0.0)
                contrib = np.conj(coeffs[l]) * coeffs[lp] * est
                total += contrib if lp == l else contrib + np.conj(contrib)
        return float(total.real)

    def assemble(self, values: np.ndarray) -> CostParts:
        """Raw cost and its (T, D) parts from the vector of test values."""
        problem = self.problem
        n = problem.n_qubits
        denom = self._pair_sum(values, self._beta)
        if denom < DENOM_FLOOR:
            raise CostError(
                f"vanishing denominator <psi|psi> = {denom:.3g}: A|x> is (near) zero"
            )
        if self.kind == "global":
            overlap = 0.0 + 0.0j
            base = self.n_static
            for l, t in enumerate(problem.terms):
                overlap += t.coefficient * (values[base + 2 * l] + 1j * values[base + 2 * l + 1])
            numerator_t = float(abs(overlap) ** 2)
        else:
            z_sum = sum(
                self._pair_sum(values, self._gamma, (j,)) for j in range(n)
            )
            numerator_t = denom / 2.0 + z_sum / (2.0 * n)
        raw = 1.0 - numerator_t / denom
        return CostParts(raw, numerator_t, denom)

    def exact_p0s(self, x_prep: Circuit) -> np.ndarray:
        """Analytic ancilla p0 per test, in plan order (sensitivity analysis)."""
        est_x = HadamardTestEstimator(x_prep, NoiseRegime("exact"))
        p0s = [est_x.exact_p0(probe, part) for probe, part in self.static_tests]
        if self.kind == "global":
            est_0 = HadamardTestEstimator(Circuit(self.problem.n_qubits), NoiseRegime("exact"))
            p0s += [est_0.exact_p0(probe, part) for probe, part in self.overlap_tests(x_prep)]
        return np.array(p0s)

    def evaluate(self, x_prep: Circuit, regime: NoiseRegime,
                 rng: np.random.Generator | None = None) -> CostParts:
        est_x = HadamardTestEstimator(x_prep, regime, rng)
        values = [est_x.estimate(probe, part) for probe, part in self.static_tests]
        if self.kind == "global":
            est_0 = HadamardTestEstimator(Circuit(self.problem.n_qubits), regime, est_x.rng)
            values += [est_0.estimate(probe, part) for probe, part in self.overlap_tests(x_prep)]
        return self.assemble(np.array(values))


@lru_cache(maxsize=64)
def plan_for(problem: LinearProblem, kind: str) -> CostPlan:
    return CostPlan(problem, kind)


# ---------------------------------------------------------------------------
# Public cost operations
# ---------------------------------------------------------------------------

def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def cost_parts(problem: LinearProblem, x_prep: Circuit, kind: str, regime: NoiseRegime,
               rng: np.random.Generator | None = None) -> CostParts:
    """Unclamped cost with its numerator/denominator parts (C = 1 - T/D)."""
    if x_prep.n_qubits != problem.n_qubits:
        raise CostError("ansatz width does not match problem width")
    return plan_for(problem, kind).evaluate(x_prep, regime, rng)


def _cost(problem, x_prep, kind, regime, rng, clamp):
    raw = cost_parts(problem, x_prep, kind, regime, rng).raw
    if clamp is None:
        clamp = regime.sampled
    return _clamp01(raw) if clamp else raw


def cost_global(problem: LinearProblem, x_prep: Circuit, regime: NoiseRegime,
                rng: np.random.Generator | None = None, clamp: bool | None = None) -> float:
    """C_G: complement of the normalized overlap of A|x> with |b>.

    Clamping to [0, 1] applies in sampled regimes only (default); exact mode
    returns the raw assembled value.
    """
    return _cost(problem, x_prep, "global", regime, rng, clamp)


def cost_local(problem: LinearProblem, x_prep: Circuit, regime: NoiseRegime,
               rng: np.random.Generator | None = None, clamp: bool | None = None) -> float:
    """C_L: local-projector variant of the cost; zero exactly at the solution."""
    return _cost(problem, x_prep, "local", regime, rng, clamp)


# ---------------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------------

def gradient(problem: LinearProblem, ansatz: ParamCircuit | AdiabaticAnsatz,
             params: np.ndarray, kind: CostKind, budget: CostBudget,
             rng: np.random.Generator | None = None,
             base_parts: CostParts | None = None) -> np.ndarray:
    """Analytic parameter-shift gradient of the ratio cost.

    T and D are degree-1 trigonometric polynomials in every uncontrolled
    rotation angle, so their derivatives follow exactly from evaluations at
    +-pi/2; the quotient rule combines them with the base-point parts.
    Charges the budget 2 evaluations per parameter (the contractual price of a
    gradient); the base-point parts are reused from the most recent cost
    evaluation when supplied, otherwise recomputed outside the budget.
    Parameters bound to controlled rotations fall back to central finite
    differences with step 1e-4.
    """
    params = np.asarray(params, dtype=float)
    n_params = len(params)
    if n_params == 0:
        return np.zeros(0)
    budget.charge(CostBudget.GRADIENT_EVALS_PER_PARAM * n_params)

    plan = plan_for(problem, kind.kind)
    regime = kind.regime

    def parts_at(theta: np.ndarray) -> CostParts:
        return plan.evaluate(ansatz.bind(theta), regime, rng)

    if base_parts is None:
        base_parts = parts_at(params)
    eligible = ansatz.param_shift_eligible()
    fallback = [k for k, ok in enumerate(eligible) if not ok]
    if fallback:
        logger.debug("finite-difference fallback (step %g) for parameters %s",
                     FD_FALLBACK_STEP, fallback)

    grad = np.zeros(n_params)
    t0, d0 = base_parts.numerator_t, base_parts.denominator
    for k in range(n_params):
        shifted = params.copy()
        if eligible[k]:
            shifted[k] = params[k] + SHIFT
            plus = parts_at(shifted)
            shifted[k] = params[k] - SHIFT
            minus = parts_at(shifted)
            dt = (plus.numerator_t - minus.numerator_t) / 2.0
            dd = (plus.denominator - minus.denominator) / 2.0
            grad[k] = (t0 * dd - dt * d0) / (d0 * d0)
        else:
            shifted[k] = params[k] + FD_FALLBACK_STEP
            c_plus = parts_at(shifted).raw
            shifted[k] = params[k] - FD_FALLBACK_STEP
            c_minus = parts_at(shifted).raw
            grad[k] = (c_plus - c_minus) / (2.0 * FD_FALLBACK_STEP)
    return grad


# ---------------------------------------------------------------------------
# Dense-oracle backend
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _dense_context(problem: LinearProblem):
    oracle = assemble_dense(problem)
    u = circuit_to_matrix(problem.b_prep)
    n = problem.n_qubits
    dim = 1 << n
    b = oracle.b_vec.reshape(-1, 1)
    h_global = oracle.matrix.conj().T @ (np.eye(dim) - b @ b.conj().T) @ oracle.matrix
    zero_counts = np.array([n - bin(i).count("1") for i in range(dim)], dtype=float)
    proj = np.diag(zero_counts / n)
    h_local = oracle.matrix.conj().T @ u @ (np.eye(dim) - proj) @ u.conj().T @ oracle.matrix
    ata = oracle.matrix.conj().T @ oracle.matrix
    return oracle, h_global, h_local, ata


def dense_cost(problem: LinearProblem, x: Circuit | StateVector | np.ndarray,
               kind: str) -> float:
    """Cross-check cost from explicitly assembled Hamiltonian matrices.

    The state may be a circuit (realized through dense matrix products, an
    independent path from the gate kernel), a StateVector, or raw amplitudes.
    """
    if kind not in ("global", "local"):
        raise ValueError(f"cost kind must be 'global' or 'local', got {kind!r}")
    _, h_global, h_local, ata = _dense_context(problem)
    if isinstance(x, Circuit):
        vec = circuit_to_matrix(x) @ zero_state(x.n_qubits).amplitudes
    elif isinstance(x, StateVector):
        vec = x.amplitudes
    else:
        vec = np.asarray(x, dtype=complex)
    h = h_global if kind == "global" else h_local
    denom = float(np.real(vec.conj() @ ata @ vec))
    if denom < DENOM_FLOOR:
        raise CostError(f"vanishing denominator <psi|psi> = {denom:.3g}")
    return float(np.real(vec.conj() @ h @ vec)) / denom
