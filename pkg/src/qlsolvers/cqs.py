"""Classical combination of quantum states: ansatz-tree regression with a
convex quadratic solve, heuristic tree expansion, and the parameterized
logical-ansatz extension (training methods 1 and 2)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .ansatz import ParamCircuit, random_shallow
from .cost import CostBudget
from .optimizers import OptimizerSpec, minimize
from .problems import LinearProblem
from .sim import Circuit, HadamardTestEstimator, NoiseRegime

REG_SCALE = 1e-8
TIE_TOL = 1e-12


class CqsError(RuntimeError):
    pass


@dataclass(frozen=True)
class TreeNode:
    """A state indexed by the unitary-term application sequence; the root
    (empty sequence) is |b> itself."""

    term_sequence: tuple[int, ...] = ()

    def child(self, term_index: int) -> "TreeNode":
        return TreeNode(self.term_sequence + (term_index,))

    def prep_circuit(self, problem: LinearProblem) -> Circuit:
        circ = problem.b_prep
        for i in self.term_sequence:
            circ = circ + problem.terms[i].circuit(problem.n_qubits)
        return circ


@dataclass
class CqsState:
    nodes: tuple[TreeNode, ...] | None
    preps: tuple[Circuit, ...]
    gram: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    l_r: float = np.nan


@dataclass(frozen=True)
class RealQp:
    """Real 2m-dimensional form of the complex quadratic: z = (Re a, Im a)."""

    q_mat: np.ndarray = field(repr=False)
    r_vec: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# Gram matrix and q vector estimation
# ---------------------------------------------------------------------------

def _estimate_complex(est: HadamardTestEstimator, probe: Circuit) -> complex:
    return complex(est.estimate(probe, "real"), est.estimate(probe, "imag"))


def estimate_gram_and_q(problem: LinearProblem, preps: tuple[Circuit, ...],
                        regime: NoiseRegime, rng: np.random.Generator | None = None
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Hadamard-test estimates of (V^dag V)_ij and q_i over term pairs.

    Only the upper state triangle is measured; the lower half is filled by
    conjugation. Every inner product is taken with an empty prep and the full
    bra/operator/ket chain inside the controlled probe.
    """
    if not preps:
        raise CqsError("need at least one state")
    n = problem.n_qubits
    m_states = len(preps)
    terms = [t.circuit(n) for t in problem.terms]
    coeffs = [t.coefficient for t in problem.terms]
    inv_preps = [p.inverse() for p in preps]
    est = HadamardTestEstimator(Circuit(n), regime, rng)

    gram = np.zeros((m_states, m_states), dtype=complex)
    for i in range(m_states):
        for j in range(i, m_states):
            total = 0.0 + 0.0j
            for l, lp in itertools.product(range(len(terms)), repeat=2):
                if i == j and lp < l:
                    continue  # hermitian in the term pair on the diagonal
                probe = preps[j] + terms[lp] + terms[l] + inv_preps[i]
                if i == j and lp == l:
                    val = complex(est.estimate(probe, "real"), 0.0)
                    total += np.conj(coeffs[l]) * coeffs[lp] * val
                else:
                    val = _estimate_complex(est, probe)
                    contrib = np.conj(coeffs[l]) * coeffs[lp] * val
                    total += contrib if i != j else contrib + np.conj(contrib)
            gram[i, j] = total
            if i != j:
                gram[j, i] = np.conj(total)

    q = np.zeros(m_states, dtype=complex)
    for i in range(m_states):
        total = 0.0 + 0.0j
        for l, term in enumerate(terms):
            probe = problem.b_prep + term + inv_preps[i]
            total += np.conj(coeffs[l]) * _estimate_complex(est, probe)
        q[i] = total
    return gram, q


def _update_gram_row(problem: LinearProblem, preps: tuple[Circuit, ...], i: int,
                     gram: np.ndarray, q: np.ndarray, regime: NoiseRegime,
                     rng: np.random.Generator | None) -> None:
    """Re-estimate row/column i of the Gram matrix and q_i in place (used when
    only member i's parameters changed)."""
    n = problem.n_qubits
    terms = [t.circuit(n) for t in problem.terms]
    coeffs = [t.coefficient for t in problem.terms]
    inv_i = preps[i].inverse()
    est = HadamardTestEstimator(Circuit(n), regime, rng)
    for j in range(len(preps)):
        a, b = min(i, j), max(i, j)
        inv_a = inv_i if a == i else preps[a].inverse()
        prep_b = preps[b]
        total = 0.0 + 0.0j
        for l, lp in itertools.product(range(len(terms)), repeat=2):
            if a == b and lp < l:
                continue
            probe = prep_b + terms[lp] + terms[l] + inv_a
            if a == b and lp == l:
                val = complex(est.estimate(probe, "real"), 0.0)
                total += np.conj(coeffs[l]) * coeffs[lp] * val
            else:
                val = _estimate_complex(est, probe)
                contrib = np.conj(coeffs[l]) * coeffs[lp] * val
                total += contrib if a != b else contrib + np.conj(contrib)
        gram[a, b] = total
        if a != b:
            gram[b, a] = np.conj(total)
    total = 0.0 + 0.0j
    for l, term in enumerate(terms):
        probe = problem.b_prep + term + inv_i
        total += np.conj(coeffs[l]) * _estimate_complex(est, probe)
    q[i] = total


# ---------------------------------------------------------------------------
# Regression solves
# ---------------------------------------------------------------------------

def _regularizer(gram: np.ndarray) -> float:
    m = gram.shape[0]
    return max(REG_SCALE * float(np.trace(gram).real) / m, 1e-14)


def residual_norm(gram: np.ndarray, q: np.ndarray, alpha: np.ndarray) -> float:
    """L_R = alpha^dag G alpha - 2 Re(q^dag alpha) + 1."""
    quad = float(np.real(alpha.conj() @ gram @ alpha))
    lin = float(np.real(q.conj() @ alpha))
    return quad - 2.0 * lin + 1.0

def solve_alpha(gram: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal combination weights by a regularized hermitian solve.

    The Gram matrix is symmetrized first; the ridge term scaled to its trace
    keeps rank-deficient node sets (duplicate states) well posed.
    """
    gram = np.asarray(gram, dtype=complex)
    q = np.asarray(q, dtype=complex)
    if not (np.all(np.isfinite(gram.view(float))) and np.all(np.isfinite(q.view(float)))):
        raise CqsError("non-finite entries in the regression inputs")
    sym = (gram + gram.conj().T) / 2.0
    lam = _regularizer(sym)
    alpha = np.linalg.solve(sym + lam * np.eye(sym.shape[0]), q)
    return alpha, residual_norm(sym, q, alpha)


def solve_alpha_real(gram: np.ndarray, q: np.ndarray) -> tuple[RealQp, np.ndarray, float]:
    """Equivalent real 2m-dimensional quadratic program.

    Built with the antisymmetric off-diagonal sign pattern that makes
    z^T Q z reproduce alpha^dag G alpha for hermitian G.
    """
    gram = (np.asarray(gram, dtype=complex) + np.asarray(gram, dtype=complex).conj().T) / 2.0
    q = np.asarray(q, dtype=complex)
    m = gram.shape[0]
    g_re, g_im = gram.real, gram.imag
    q_mat = np.block([[g_re, -g_im], [g_im, g_re]])
    r_vec = np.concatenate([q.real, q.imag])
    lam = _regularizer(gram)
    z = np.linalg.solve(q_mat + lam * np.eye(2 * m), r_vec)
    l_r = float(z @ q_mat @ z - 2.0 * r_vec @ z + 1.0)
    alpha = z[:m] + 1j * z[m:]
    return RealQp(q_mat, r_vec, z), alpha, l_r


# ---------------------------------------------------------------------------
# Tree expansion
# ---------------------------------------------------------------------------

def _solved_state(problem, nodes, regime, rng) -> CqsState:
    preps = tuple(node.prep_circuit(problem) for node in nodes)
    gram, q = estimate_gram_and_q(problem, preps, regime, rng)
    alpha, l_r = solve_alpha(gram, q)
    return CqsState(tuple(nodes), preps, gram, q, alpha, l_r)


def heuristic_expand(problem: LinearProblem, state: CqsState, regime: NoiseRegime,
                     rng: np.random.Generator | None = None) -> TreeNode:
    """Child node whose state has the largest gradient-overlap magnitude.

    The overlap 2 sum_i conj(alpha_i) <psi|A A|s_i> - 2 <psi|A|b> is expanded
    over term pairs and estimated test by test; ties break to the smallest
    term sequence.
    """
    if state.nodes is None:
        raise CqsError("heuristic expansion needs tree-node states")
    n = problem.n_qubits
    existing = {node.term_sequence for node in state.nodes}
    candidates = sorted(
        {node.term_sequence + (i,) for node in state.nodes for i in range(len(problem.terms))}
        - existing
    )
    if not candidates:
        raise CqsError("no unexpanded child nodes")
    terms = [t.circuit(n) for t in problem.terms]
    coeffs = [t.coefficient for t in problem.terms]
    est = HadamardTestEstimator(Circuit(n), regime, rng)

    scored = []
    for seq in candidates:
        child = TreeNode(seq)
        inv_child = child.prep_circuit(problem).inverse()
        overlap = 0.0 + 0.0j
        for alpha_i, node in zip(state.alpha, state.nodes):
            g_i = 0.0 + 0.0j
            prep_i = node.prep_circuit(problem)
            for l, lp in itertools.product(range(len(terms)), repeat=2):
                probe = prep_i + terms[lp] + terms[l] + inv_child
                g_i += coeffs[l] * coeffs[lp] * _estimate_complex(est, probe)
            overlap += 2.0 * np.conj(alpha_i) * g_i
        h = 0.0 + 0.0j
        for l, term in enumerate(terms):
            probe = problem.b_prep + term + inv_child
            h += coeffs[l] * _estimate_complex(est, probe)
        overlap -= 2.0 * h
        scored.append((abs(overlap), seq))
    best_score = max(s for s, _ in scored)
    best_seq = min(seq for s, seq in scored if s >= best_score - TIE_TOL)
    return TreeNode(best_seq)


@dataclass(frozen=True)
class BreadthFirst:
    depth: int


@dataclass(frozen=True)
class Heuristic:
    max_nodes: int


@dataclass(frozen=True)
class FixedNodes:
    sequences: tuple[tuple[int, ...], ...]


def breadth_first_sequences(n_terms: int, depth: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for level in range(depth + 1):
        out.extend(itertools.product(range(n_terms), repeat=level))
    return out


@dataclass
class CqsResult:
    state: CqsState
    history: list[tuple[int, float]]  # (node count, L_R)


def run_cqs(problem: LinearProblem, mode, regime: NoiseRegime,
            rng: np.random.Generator | None = None) -> CqsResult:
    """Iterated solve/expand over the ansatz tree.

    BreadthFirst adds every node up to the depth in tree order, re-solving
    after each addition; Heuristic grows greedily by gradient overlap;
    FixedNodes solves once on the given pre-expanded set.
    """
    if rng is None and regime.sampled:
        rng = regime.make_rng()
    history: list[tuple[int, float]] = []
    if isinstance(mode, FixedNodes):
        nodes = [TreeNode(tuple(seq)) for seq in mode.sequences]
        if not nodes:
            raise CqsError("FixedNodes needs at least one sequence")
        state = _solved_state(problem, nodes, regime, rng)
        history.append((len(nodes), state.l_r))
        return CqsResult(state, history)
    if isinstance(mode, BreadthFirst):
        nodes: list[TreeNode] = []
        state = None
        for seq in breadth_first_sequences(len(problem.terms), mode.depth):
            nodes.append(TreeNode(seq))
            state = _solved_state(problem, nodes, regime, rng)
            history.append((len(nodes), state.l_r))
        return CqsResult(state, history)
    if isinstance(mode, Heuristic):
        nodes = [TreeNode()]
        state = _solved_state(problem, nodes, regime, rng)
        history.append((1, state.l_r))
        while len(nodes) < mode.max_nodes:
            child = heuristic_expand(problem, state, regime, rng)
            nodes.append(child)
            state = _solved_state(problem, nodes, regime, rng)
            history.append((len(nodes), state.l_r))
        return CqsResult(state, history)
    raise CqsError(f"unknown CQS mode {mode!r}")


# ---------------------------------------------------------------------------
# Logical ansatz (LAVQLS)
# ---------------------------------------------------------------------------

@dataclass
class LavqlsResult:
    members: list[ParamCircuit]
    thetas: list[np.ndarray]
    state: CqsState
    history: list[float]  # L_R after each re-solve


def _solve_members(problem, members, thetas, regime, rng):
    preps = tuple(m.bind(t) for m, t in zip(members, thetas))
    gram, q = estimate_gram_and_q(problem, preps, regime, rng)
    alpha, l_r = solve_alpha(gram, q)
    return preps, gram, q, alpha, l_r


def run_lavqls(problem: LinearProblem, n_ansatze: int = 5, layers: int = 3,
               method: str = "m1", rounds: int = 3,
               optimizer: OptimizerSpec | None = None,
               regime: NoiseRegime | None = None, seed: int = 0,
               member_evals: int = 60, total_evals: int = 1000) -> LavqlsResult:
    """Classically combined set of random shallow ansatze.

    Method 1 visits members in random order each round, optimizing one
    member's parameters with the combination weights frozen and re-solving the
    weights after each member. Method 2 optimizes the concatenated parameter
    vector with the weights re-solved inside every cost evaluation.
    """
    if method not in ("m1", "m2"):
        raise CqsError("method must be 'm1' or 'm2'")
    regime = regime if regime is not None else NoiseRegime("exact")
    optimizer = optimizer if optimizer is not None else OptimizerSpec("powell", seed=seed)
    master = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 11])
    noise_rng = regime.make_rng() if regime.sampled else None
    members = [random_shallow(problem.n_qubits, layers, seed=int(master.integers(2**63)))
               for _ in range(n_ansatze)]
    thetas = [master.uniform(-np.pi, np.pi, m.n_params) for m in members]

    history: list[float] = []
    preps, gram, q, alpha, l_r = _solve_members(problem, members, thetas, regime, noise_rng)
    history.append(l_r)

    if method == "m1":
        for _ in range(rounds):
            for idx in master.permutation(n_ansatze):
                idx = int(idx)
                if members[idx].n_params == 0:
                    continue
                preps_list = list(preps)

                def objective(theta):
                    preps_list[idx] = members[idx].bind(theta)
                    g2 = gram.copy()
                    q2 = q.copy()
                    _update_gram_row(problem, tuple(preps_list), idx, g2, q2,
                                     regime, noise_rng)
                    return residual_norm((g2 + g2.conj().T) / 2.0, q2, alpha)

                incumbent = thetas[idx].copy()
                budget = CostBudget(member_evals)
                result = minimize(objective, incumbent, optimizer, budget)
                frozen_before = residual_norm((gram + gram.conj().T) / 2.0, q, alpha)
                if result.best_cost <= frozen_before:
                    thetas[idx] = np.asarray(result.best_params, dtype=float)
                preps = tuple(m.bind(t) for m, t in zip(members, thetas))
                _update_gram_row(problem, preps, idx, gram, q, regime, noise_rng)
                alpha, l_r = solve_alpha(gram, q)
                history.append(l_r)
        state = CqsState(None, preps, gram, q, alpha, l_r)
        return LavqlsResult(members, thetas, state, history)

    # method 2: one logical ansatz over the concatenated parameters
    sizes = [m.n_params for m in members]
    splits = np.cumsum(sizes)[:-1]

    def objective(theta_all):
        parts = np.split(np.asarray(theta_all, dtype=float), splits)
        _, _, _, _, l_val = _solve_members(problem, members, list(parts), regime, noise_rng)
        history.append(l_val)
        return l_val

    x0 = np.concatenate(thetas) if thetas else np.zeros(0)
    budget = CostBudget(total_evals)
    result = minimize(objective, x0, optimizer, budget)
    best_parts = [np.asarray(t, dtype=float) for t in np.split(result.best_params, splits)]
    preps, gram, q, alpha, l_r = _solve_members(problem, members, best_parts, regime, noise_rng)
    history.append(l_r)
    state = CqsState(None, preps, gram, q, alpha, l_r)
    return LavqlsResult(members, best_parts, state, history)
