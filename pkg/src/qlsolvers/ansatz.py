"""Parameterized circuit families: layered hardware-efficient ansatze, the
identity-initializable adiabatic ansatz, and seeded random shallow ansatze."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .sim import Circuit, Gate, SimError, hadamard_all, run_circuit, zero_state

IDENTITY_TOL = 1e-10


class AnsatzError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    """One gate position in a template; n_params > 0 marks a trainable slot."""

    kind: str
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    n_params: int = 0
    fixed_params: tuple[float, ...] = ()


@dataclass(frozen=True)
class ParamCircuit:
    """Immutable template; bind(params) materializes a Circuit deterministically."""

    n_qubits: int
    slots: tuple[Slot, ...]
    descriptor: dict | None = field(default=None, compare=False)

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.slots)

    def bind(self, params) -> Circuit:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise AnsatzError(f"expected {self.n_params} parameters, got {params.shape}")
        gates = []
        k = 0
        for s in self.slots:
            if s.n_params:
                angles = tuple(params[k : k + s.n_params])
                k += s.n_params
            else:
                angles = s.fixed_params
            gates.append(Gate(s.kind, s.targets, s.controls, angles))
        return Circuit(self.n_qubits, tuple(gates))

    def param_shift_eligible(self):
        """Per-parameter flags: True where the two-point shift rule is exact.

        Uncontrolled rotation angles qualify; controlled-rotation angles have a
        three-valued generator spectrum and fall back to finite differences.
        """
        flags = []
        for s in self.slots:
            if s.n_params:
                ok = s.kind in ("ry", "u3") and not s.controls
                flags.extend([ok] * s.n_params)
        return tuple(flags)


def linear_coupling(n_qubits: int) -> tuple[tuple[int, int], ...]:
    return tuple((q, q + 1) for q in range(n_qubits - 1))


def full_coupling(n_qubits: int) -> tuple[tuple[int, int], ...]:
    return tuple((a, b) for a in range(n_qubits) for b in range(a + 1, n_qubits))


def layered_ansatz(n_qubits: int, n_layers: int, gate_family: str = "ry_cz",
                   coupling=None) -> ParamCircuit:
    """One Ry per qubit per layer followed by entanglers along the coupling list.

    gate_family selects the entangler: "ry_cz" or "ry_cx". Parameter count is
    n_qubits * n_layers.
    """
    if n_layers < 1:
        raise AnsatzError("need at least one layer")
    if gate_family not in ("ry_cz", "ry_cx"):
        raise AnsatzError(f"unknown gate family {gate_family!r}")
    coupling = linear_coupling(n_qubits) if coupling is None else tuple(map(tuple, coupling))
    for a, b in coupling:
        if not (0 <= a < n_qubits and 0 <= b < n_qubits and a != b):
            raise AnsatzError(f"invalid coupling pair ({a}, {b})")
    if not coupling and n_qubits > 1 and n_layers > 1:
        warnings.warn("empty coupling list: the ansatz has no entanglement", stacklevel=2)
    ent = "z" if gate_family == "ry_cz" else "x"
    slots = []
    for _ in range(n_layers):
        for q in range(n_qubits):
            slots.append(Slot("ry", (q,), n_params=1))
        for a, b in coupling:
            slots.append(Slot(ent, (b,), controls=(a,)))
    desc = {"family": f"layered_{gate_family}", "n_qubits": n_qubits,
            "n_layers": n_layers, "coupling": [list(p) for p in coupling]}
    return ParamCircuit(n_qubits, tuple(slots), descriptor=desc)


def identity_init(ansatz: ParamCircuit) -> np.ndarray:
    """Parameter vector at which the bound circuit fixes |0...0>.

    Returns all zeros after verifying the action; raises when the template
    admits no identity point rather than silently approximating one.
    """
    params = np.zeros(ansatz.n_params)
    state = run_circuit(ansatz.bind(params), zero_state(ansatz.n_qubits))
    ref = zero_state(ansatz.n_qubits).amplitudes
    dev = float(np.max(np.abs(state.amplitudes - ref)))
    if dev > IDENTITY_TOL:
        raise AnsatzError(f"ansatz family admits no identity point (deviation {dev:.3g})")
    return params


@dataclass(frozen=True)
class AdiabaticAnsatz:
    """Inner template V followed by the b-preparation unitary U, so that the
    bound circuit at the identity point prepares |b> exactly."""

    inner: ParamCircuit
    b_suffix: Circuit

    def __post_init__(self):
        if self.inner.n_qubits != self.b_suffix.n_qubits:
            raise AnsatzError("inner ansatz and b suffix widths differ")

    @property
    def n_qubits(self) -> int:
        return self.inner.n_qubits

    @property
    def n_params(self) -> int:
        return self.inner.n_params

    def bind(self, params) -> Circuit:
        return self.inner.bind(params) + self.b_suffix

    def param_shift_eligible(self):
        return self.inner.param_shift_eligible()

    def identity_point(self) -> np.ndarray:
        return identity_init(self.inner)


def adiabatic_ansatz(n_qubits: int, n_layers: int, b_prep: Circuit | None = None,
                     coupling=None, gate_family: str = "ry_cx") -> AdiabaticAnsatz:
    """Standard construction: layered inner ansatz plus the |b> unitary.

    Both entangler families fix |0...0> at all-zero angles (CZ is diagonal; a
    CX never fires off a |0> control), so zero is an exact identity point of
    the inner template; identity_init verifies it.
    """
    inner = layered_ansatz(n_qubits, n_layers, gate_family, coupling)
    suffix = b_prep if b_prep is not None else hadamard_all(n_qubits)
    return AdiabaticAnsatz(inner, suffix)


def random_shallow(n_qubits: int, n_layers: int = 3, seed: int = 0) -> ParamCircuit:
    """Random layers over the gate set {I, Ry, CX}; every qubit is covered
    exactly once per layer (a CX covers its control-target pair)."""
    rng = np.random.default_rng(seed)
    slots = []
    for _ in range(n_layers):
        order = list(rng.permutation(n_qubits))
        while order:
            q = int(order.pop(0))
            choices = ["i", "ry"] + (["cx"] if order else [])
            pick = choices[rng.integers(len(choices))]
            if pick == "i":
                slots.append(Slot("i", (q,)))
            elif pick == "ry":
                slots.append(Slot("ry", (q,), n_params=1))
            else:
                partner = int(order.pop(int(rng.integers(len(order)))))
                control, target = (q, partner) if rng.integers(2) == 0 else (partner, q)
                slots.append(Slot("x", (target,), controls=(control,)))
    desc = {"family": "random_shallow", "n_qubits": n_qubits,
            "n_layers": n_layers, "seed": int(seed)}
    return ParamCircuit(n_qubits, tuple(slots), descriptor=desc)


def ansatz_from_descriptor(desc: dict) -> ParamCircuit:
    """Rebuild a template from its JSON descriptor (run reproducibility)."""
    family = desc.get("family")
    if family in ("layered_ry_cz", "layered_ry_cx"):
        return layered_ansatz(desc["n_qubits"], desc["n_layers"],
                              family.removeprefix("layered_"),
                              desc.get("coupling"))
    if family == "random_shallow":
        return random_shallow(desc["n_qubits"], desc["n_layers"], desc["seed"])
    raise AnsatzError(f"unknown ansatz descriptor family {family!r}")
