"""Linear-system instances A = sum_l c_l A_l with tensor-string unitaries.

Each A_l is a tensor product of single-qubit factors from {I, H, X, Z}. The
right-hand side is given as a preparation circuit U with U|0> = |b>. Paper
qubit labels are 1-based; label i maps to little-endian qubit index i - 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .sim import Circuit, Gate, StateVector, hadamard_all, run_circuit, zero_state

DENSE_CAP_QUBITS = 12

_FACTORS = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class UnitaryTerm:
    """One c_l * A_l term; factors[q] is the single-qubit label on qubit q."""

    coefficient: complex
    factors: str

    def __post_init__(self):
        for ch in self.factors:
            if ch not in _FACTORS:
                raise ProblemError(f"unsupported factor {ch!r} (allowed: I, H, X, Z)")

    def circuit(self, n_qubits: int) -> Circuit:
        """The term's unitary as a gate list (non-identity factors only)."""
        gates = tuple(
            Gate(ch.lower(), (q,)) for q, ch in enumerate(self.factors) if ch != "I"
        )
        return Circuit(n_qubits, gates)

    def matrix(self) -> np.ndarray:
        """Dense tensor-product matrix, without the coefficient."""
        mats = [_FACTORS[ch] for ch in reversed(self.factors)]  # qubit 0 = LSB
        return reduce(np.kron, mats)


@dataclass(frozen=True)
class LinearProblem:
    n_qubits: int
    terms: tuple[UnitaryTerm, ...]
    b_prep: Circuit
    id: str | None = None

    def __post_init__(self):
        if not self.terms:
            raise ProblemError("a problem needs at least one term")
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if len(t.factors) != self.n_qubits:
                raise ProblemError("term factor string length must equal n_qubits")
        if self.b_prep.n_qubits != self.n_qubits:
            raise ProblemError("b_prep width must equal n_qubits")


@dataclass(frozen=True)
class DenseOracle:
    """Ground-truth dense matrix A and normalized |b> amplitudes."""

    matrix: np.ndarray = field(repr=False)
    b_vec: np.ndarray = field(repr=False)


def assemble_dense(problem: LinearProblem, cap: int = DENSE_CAP_QUBITS) -> DenseOracle:
    """Dense A via Kronecker products; b via simulating the preparation circuit."""
    if problem.n_qubits > cap:
        raise ProblemError(f"{problem.n_qubits} qubits exceeds the dense cap of {cap}")
    dim = 1 << problem.n_qubits
    matrix = np.zeros((dim, dim), dtype=complex)
    for t in problem.terms:
        matrix += t.coefficient * t.matrix()
    b_vec = run_circuit(problem.b_prep, zero_state(problem.n_qubits)).amplitudes
    return DenseOracle(matrix, b_vec)


def exact_solution(oracle: DenseOracle) -> StateVector:
    """Normalized A^-1 b by a dense solve; errors on (near-)singular A."""
    cond = np.linalg.cond(oracle.matrix)
    if not np.isfinite(cond) or cond > 1e12:
        raise ProblemError(f"matrix is numerically singular (condition estimate {cond:.3g})")
    x = np.linalg.solve(oracle.matrix, oracle.b_vec)
    x = x / np.linalg.norm(x)
    n_qubits = int(round(np.log2(len(x))))
    return StateVector(n_qubits, x)


def embed_hermitian(matrix: np.ndarray) -> np.ndarray:
    """Doubled embedding [[0, A], [A^dag, 0]]; hermitian for any square A."""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ProblemError("hermitian embedding needs a square matrix")
    n = matrix.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=complex)
    out[:n, n:] = matrix
    out[n:, :n] = matrix.conj().T
    return out


# ---------------------------------------------------------------------------
# Benchmark registry
# ---------------------------------------------------------------------------

def _instance(name: str, n: int, terms: list[tuple[complex, dict[int, str]]]) -> LinearProblem:
    """Build from 1-based qubit labels, e.g. (0.25, {2: "Z"}) for 0.25 * Z_2."""
    built = []
    for coeff, placed in terms:
        factors = ["I"] * n
        for label, ch in placed.items():
            factors[label - 1] = ch
        built.append(UnitaryTerm(coeff, "".join(factors)))
    return LinearProblem(n, tuple(built), hadamard_all(n), id=name)


_REGISTRY_BUILDERS = {
    "A1": lambda: _instance("A1", 3, [(1.0, {1: "H"}), (0.25, {2: "Z"}), (0.15, {3: "H"})]),
    "A2": lambda: _instance("A2", 4, [(1.0, {1: "Z"}), (0.25, {2: "Z"}), (0.5, {4: "Z"})]),
    "A3": lambda: _instance("A3", 5, [(1.0, {1: "H"}), (0.25, {3: "Z"}), (0.5, {5: "H"})]),
    # Printed as acting on qubits 1-4 but described as a five qubit problem;
    # realized on 5 qubits with identity on the fifth.
    "A4": lambda: _instance("A4", 5, [(1.0, {1: "Z"}), (0.15, {3: "Z"}), (0.5, {4: "Z"})]),
    "A5": lambda: _instance("A5", 4, [(1.0, {1: "Z"}), (0.15, {2: "X", 3: "Z"}), (0.5, {4: "H"})]),
    "A6": lambda: _instance("A6", 3, [(1.0, {}), (0.25, {2: "Z"}), (0.175, {3: "H"})]),
    "A7": lambda: _instance("A7", 5, [(1.0, {1: "H"}), (0.25, {3: "Z"}), (0.5, {4: "H"}), (0.5, {5: "Z"})]),
}

REGISTRY_IDS = tuple(sorted(_REGISTRY_BUILDERS))


def registry_get(id: str) -> LinearProblem:
    try:
        return _REGISTRY_BUILDERS[id]()
    except KeyError:
        raise ProblemError(f"unknown problem id {id!r}; known: {', '.join(REGISTRY_IDS)}") from None


# ---------------------------------------------------------------------------
# JSON interface
# ---------------------------------------------------------------------------

def problem_from_json(doc: str | dict) -> LinearProblem:
    """Load a problem document; a registry id in "id" overrides the body."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if "id" in doc and doc["id"]:
        return registry_get(doc["id"])
    try:
        n = int(doc["n_qubits"])
        terms = tuple(
            UnitaryTerm(complex(t["coeff_re"], t.get("coeff_im", 0.0)), t["factors"])
            for t in doc["terms"]
        )
        b_spec = doc.get("b_prep", "hadamard_all")
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem document: {exc}") from exc
    if b_spec != "hadamard_all":
        raise ProblemError(f"unsupported b_prep {b_spec!r} (only 'hadamard_all')")
    return LinearProblem(n, terms, hadamard_all(n))


def problem_to_json(problem: LinearProblem) -> dict:
    return {
        "id": problem.id,
        "n_qubits": problem.n_qubits,
        "terms": [
            {"coeff_re": t.coefficient.real, "coeff_im": t.coefficient.imag, "factors": t.factors}
            for t in problem.terms
        ],
        "b_prep": "hadamard_all",
    }
