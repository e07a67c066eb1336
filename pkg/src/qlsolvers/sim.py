"""Complex state-vector simulator: gates, circuits, Hadamard tests, noise regimes.

Qubit ordering is little-endian: qubit 0 is the least-significant bit of the
amplitude index. The Hadamard-test ancilla is always the highest-indexed qubit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SQRT2_INV = 1.0 / math.sqrt(2.0)

# Gate kinds with a fixed 2x2 matrix.
_FIXED_GATES = {
    "i": np.eye(2, dtype=complex),
    "h": np.array([[SQRT2_INV, SQRT2_INV], [SQRT2_INV, -SQRT2_INV]], dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "s": np.array([[1, 0], [0, 1j]], dtype=complex),
    "sdg": np.array([[1, 0], [0, -1j]], dtype=complex),
}

GATE_KINDS = ("i", "h", "x", "z", "s", "sdg", "ry", "u3")

# Trajectory count used to realize the per-gate depolarizing channel when
# sampling; shots are split evenly across trajectories.
DEPOL_TRAJECTORIES = 64


class SimError(ValueError):
    """Invalid gate, circuit, or state input."""


@dataclass(frozen=True)
class Gate:
    """One gate application: kind, target qubits, optional controls and angles."""

    kind: str
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimError(f"unknown gate kind {self.kind!r}")
        if len(self.targets) != 1:
            raise SimError("every supported gate acts on exactly one target qubit")
        if set(self.targets) & set(self.controls):
            raise SimError("controls and targets must be disjoint")
        n_expected = {"ry": 1, "u3": 3}.get(self.kind, 0)
        if len(self.params) != n_expected:
            raise SimError(f"{self.kind} takes {n_expected} parameter(s), got {len(self.params)}")
        for p in self.params:
            if not math.isfinite(p):
                raise SimError(f"non-finite gate parameter {p!r}")

    def matrix(self) -> np.ndarray:
        """2x2 matrix of the uncontrolled gate."""
        if self.kind in _FIXED_GATES:
            return _FIXED_GATES[self.kind]
        if self.kind == "ry":
            (theta,) = self.params
            c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
            return np.array([[c, -s], [s, c]], dtype=complex)
        # u3(theta, phi, lam)
        theta, phi, lam = self.params
        c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
        return np.array(
            [[c, -np.exp(1j * lam) * s], [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c]],
            dtype=complex,
        )

    def inverse(self) -> "Gate":
        if self.kind == "s":
            return Gate("sdg", self.targets, self.controls)
        if self.kind == "sdg":
            return Gate("s", self.targets, self.controls)
        if self.kind == "ry":
            return Gate("ry", self.targets, self.controls, (-self.params[0],))
        if self.kind == "u3":
            theta, phi, lam = self.params
            return Gate("u3", self.targets, self.controls, (-theta, -lam, -phi))
        return self  # i, h, x, z are self-inverse


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list over a fixed register width."""

    n_qubits: int
    gates: tuple[Gate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            for q in g.targets + g.controls:
                if not 0 <= q < self.n_qubits:
                    raise SimError(f"gate touches qubit {q}, register has {self.n_qubits}")

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise SimError("cannot concatenate circuits of different widths")
        return Circuit(self.n_qubits, self.gates + other.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.inverse() for g in reversed(self.gates)))


@dataclass(frozen=True)
class StateVector:
    """Complex amplitudes over 2**n_qubits basis states."""

    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise SimError("amplitude length must be 2**n_qubits")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def zero_state(n_qubits: int) -> StateVector:
    if n_qubits < 1:
        raise SimError("need at least one qubit")
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


@dataclass(frozen=True)
class NoiseRegime:
    """Estimation regime: exact expectations, shot sampling, or shots + depolarizing.

    mode is one of "exact", "shots", "shots_depolarizing". For sampled modes
    n_shots is the per-Hadamard-test repetition count. depol_p is the per-gate
    per-qubit Pauli error probability, applied after each non-identity gate by
    stochastic trajectory sampling (shots split across DEPOL_TRAJECTORIES
    trajectories). rng_seed seeds the sampling stream.
    """

    mode: str = "exact"
    n_shots: int = 0
    depol_p: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "shots", "shots_depolarizing"):
            raise SimError(f"unknown noise mode {self.mode!r}")
        if self.mode != "exact" and self.n_shots <= 0:
            raise SimError("sampled regimes need a positive shot count")
        if not 0.0 <= self.depol_p <= 0.5:
            raise SimError("depolarizing probability must lie in [0, 0.5]")

    @property
    def sampled(self) -> bool:
        return self.mode != "exact"

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def exact_regime() -> NoiseRegime:
    return NoiseRegime("exact")


def shots_regime(n_shots: int, seed: int = 0) -> NoiseRegime:
    return NoiseRegime("shots", n_shots=n_shots, rng_seed=seed)


def depolarizing_regime(n_shots: int, p: float = 0.005, seed: int = 0) -> NoiseRegime:
    return NoiseRegime("shots_depolarizing", n_shots=n_shots, depol_p=p, rng_seed=seed)


# ---------------------------------------------------------------------------
# Gate application
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _pair_indices(n_qubits: int, target: int, controls: tuple[int, ...]):
    """Index pairs (target bit 0 / 1) of the amplitude subspace a gate acts on."""
    idx = np.arange(1 << n_qubits)
    mask = (idx >> target) & 1 == 0
    for c in controls:
        mask &= (idx >> c) & 1 == 1
    i0 = idx[mask]
    return i0, i0 | (1 << target)


def _apply_matrix_inplace(amps: np.ndarray, n_qubits: int, target: int,
                          controls: tuple[int, ...], m: np.ndarray) -> None:
    i0, i1 = _pair_indices(n_qubits, target, controls)
    a0 = amps[i0]
    a1 = amps[i1]
    amps[i0] = m[0, 0] * a0 + m[0, 1] * a1
    amps[i1] = m[1, 0] * a0 + m[1, 1] * a1


def _apply_gate_inplace(amps: np.ndarray, n_qubits: int, gate: Gate) -> None:
    if gate.kind == "i":
        return
    for q in gate.targets + gate.controls:
        if q >= n_qubits:
            raise SimError(f"gate touches qubit {q}, register has {n_qubits}")
    _apply_matrix_inplace(amps, n_qubits, gate.targets[0], gate.controls, gate.matrix())


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return gate @ state; the input state is left unmodified."""
    amps = state.amplitudes.copy()
    _apply_gate_inplace(amps, state.n_qubits, gate)
    return StateVector(state.n_qubits, amps)


def run_circuit(circuit: Circuit, initial: StateVector) -> StateVector:
    """Apply the circuit's gates in list order to the initial state."""
    if circuit.n_qubits != initial.n_qubits:
        raise SimError("circuit width does not match state width")
    amps = initial.amplitudes.copy()
    for g in circuit.gates:
        _apply_gate_inplace(amps, circuit.n_qubits, g)
    return StateVector(circuit.n_qubits, amps)


def inner_product_exact(a: StateVector, b: StateVector) -> complex:
    """<a|b> by direct summation."""
    if a.n_qubits != b.n_qubits:
        raise SimError("state widths differ")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def circuit_to_matrix(circuit: Circuit) -> np.ndarray:
    """Dense unitary of the whole circuit (oracle-side path, small registers only)."""
    dim = 1 << circuit.n_qubits
    full = np.eye(dim, dtype=complex)
    for g in circuit.gates:
        if g.kind == "i":
            continue
        gm = np.eye(dim, dtype=complex)
        i0, i1 = _pair_indices(circuit.n_qubits, g.targets[0], g.controls)
        m = g.matrix()
        gm[i0, i0] = m[0, 0]
        gm[i0, i1] = m[0, 1]
        gm[i1, i0] = m[1, 0]
        gm[i1, i1] = m[1, 1]
        full = gm @ full
    return full


# ---------------------------------------------------------------------------
# Hadamard test
# ---------------------------------------------------------------------------

def _ancilla_test_p0(phi: np.ndarray, n_qubits: int, probe: Circuit, part: str) -> float:
    """P(ancilla = 0) for the Hadamard test with the work register prepared in phi.

    Simulates the (n+1)-qubit circuit H_a [Sdg_a] controlled-probe H_a with the
    ancilla as qubit n; the uncontrolled prep stage is the given phi.
    """
    n_all = n_qubits + 1
    amps = np.empty(1 << n_all, dtype=complex)
    half = 1 << n_qubits
    amps[:half] = phi * SQRT2_INV
    amps[half:] = phi * (SQRT2_INV if part == "real" else -1j * SQRT2_INV)
    for g in probe.gates:
        _apply_matrix_inplace(amps, n_all, g.targets[0], g.controls + (n_qubits,), g.matrix())
    lo = amps[:half]
    hi = amps[half:]
    p0 = 0.5 * float(np.sum(np.abs(lo + hi) ** 2))
    return min(max(p0, 0.0), 1.0)


def _noisy_trajectory_p0(gates: list[Gate], n_all: int, p: float,
                         rng: np.random.Generator) -> float:
    """One stochastic Pauli trajectory of the full test circuit; returns its p0.

    The Y error is realized as ry(pi) (equal to Y up to a global phase, which
    cannot affect measurement probabilities within a trajectory).
    """
    amps = np.zeros(1 << n_all, dtype=complex)
    amps[0] = 1.0
    paulis = ("x", "z", "ry")
    for g in gates:
        _apply_gate_inplace(amps, n_all, g)
        if g.kind == "i":
            continue
        for q in g.targets + g.controls:
            if rng.random() < p:
                kind = paulis[rng.integers(3)]
                err = Gate(kind, (q,), (), (math.pi,) if kind == "ry" else ())
                _apply_gate_inplace(amps, n_all, err)
    half = 1 << (n_all - 1)
    return float(np.sum(np.abs(amps[:half]) ** 2))


def _full_test_gates(prep: Circuit, probe: Circuit, part: str) -> tuple[list[Gate], int]:
    n = prep.n_qubits
    anc = n
    gates: list[Gate] = list(prep.gates)
    gates.append(Gate("h", (anc,)))
    if part == "imag":
        gates.append(Gate("sdg", (anc,)))
    for g in probe.gates:
        gates.append(Gate(g.kind, g.targets, g.controls + (anc,), g.params))
    gates.append(Gate("h", (anc,)))
    return gates, n + 1


def sample_expectation(p0: float, n_shots: int, rng: np.random.Generator) -> float:
    """Shot estimate of p0 - p1 from a seeded binomial draw on the ancilla."""
    if n_shots <= 0:
        raise SimError("shot count must be positive")
    k = int(rng.binomial(n_shots, min(max(p0, 0.0), 1.0)))
    return 2.0 * k / n_shots - 1.0


def hadamard_test(prep: Circuit, probe: Circuit, part: str, regime: NoiseRegime,
                  rng: np.random.Generator | None = None) -> float:
    """Estimate Re or Im of <0| prep^dag probe prep |0> via the ancilla test.

    part is "real" or "imag". Exact mode returns p0 - p1 analytically; "shots"
    draws the ancilla outcome n_shots times from a seeded binomial on the exact
    p0; "shots_depolarizing" additionally applies the per-gate Pauli channel by
    trajectory sampling. When rng is omitted, sampled regimes use a fresh
    generator seeded from regime.rng_seed.
    """
    if part not in ("real", "imag"):
        raise SimError("part must be 'real' or 'imag'")
    if prep.n_qubits != probe.n_qubits:
        raise SimError("prep and probe must act on the same register width")
    if regime.sampled and rng is None:
        rng = regime.make_rng()

    if regime.mode == "shots_depolarizing":
        gates, n_all = _full_test_gates(prep, probe, part)
        n_traj = min(regime.n_shots, DEPOL_TRAJECTORIES)
        base, extra = divmod(regime.n_shots, n_traj)
        ones = 0
        for t in range(n_traj):
            p0 = _noisy_trajectory_p0(gates, n_all, regime.depol_p, rng)
            shots_t = base + (1 if t < extra else 0)
            ones += int(rng.binomial(shots_t, min(max(1.0 - p0, 0.0), 1.0)))
        return 1.0 - 2.0 * ones / regime.n_shots

    phi = run_circuit(prep, zero_state(prep.n_qubits)).amplitudes
    p0 = _ancilla_test_p0(phi, prep.n_qubits, probe, part)
    if regime.mode == "exact":
        return 2.0 * p0 - 1.0
    return sample_expectation(p0, regime.n_shots, rng)


class HadamardTestEstimator:
    """Evaluation-scoped estimator that amortizes the prep simulation.

    All tests of one cost evaluation share the same uncontrolled prep stage, so
    the work-register state is simulated once; each estimate then runs only the
    ancilla stage and the controlled probe. Depolarizing mode cannot share the
    prep (noise hits its gates per trajectory) and falls back to full circuits.
    """

    def __init__(self, prep: Circuit, regime: NoiseRegime,
                 rng: np.random.Generator | None = None):
        self.prep = prep
        self.regime = regime
        self.rng = rng if rng is not None else (regime.make_rng() if regime.sampled else None)
        self._phi = None
        if regime.mode != "shots_depolarizing":
            self._phi = run_circuit(prep, zero_state(prep.n_qubits)).amplitudes

    def exact_p0(self, probe: Circuit, part: str) -> float:
        phi = self._phi
        if phi is None:
            phi = run_circuit(self.prep, zero_state(self.prep.n_qubits)).amplitudes
        return _ancilla_test_p0(phi, self.prep.n_qubits, probe, part)

    def estimate(self, probe: Circuit, part: str) -> float:
        if self.regime.mode == "shots_depolarizing":
            return hadamard_test(self.prep, probe, part, self.regime, self.rng)
        p0 = self.exact_p0(probe, part)
        if self.regime.mode == "exact":
            return 2.0 * p0 - 1.0
        return sample_expectation(p0, self.regime.n_shots, self.rng)


def hadamard_all(n_qubits: int) -> Circuit:
    return Circuit(n_qubits, tuple(Gate("h", (q,)) for q in range(n_qubits)))
