"""Evolutionary ansatz construction: genomes of gate layers evolved by
topological search, per-gene parameter search, and removal, with
lineage-based speciation and fitness sharing."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ansatz import Slot
from .cost import CostBudget, CostKind, cost_parts
from .optimizers import OptimizerSpec, minimize
from .problems import LinearProblem
from .sim import Circuit, Gate

SELECTION_EPS = 1e-6
_FAMILIES = {"ry": "ry", "u3": "u3"}


class GenomeError(ValueError):
    pass


@dataclass
class Gene:
    """One ansatz layer: every qubit carries exactly one gate slot (a
    controlled gate covers its two qubits); freshly created genes bind to the
    identity through all-zero angles."""

    slots: tuple[Slot, ...]
    params: np.ndarray

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.slots)

    def two_qubit_count(self) -> int:
        return sum(1 for s in self.slots if s.controls)

    def covered_qubits(self) -> list[int]:
        out = []
        for s in self.slots:
            out.extend(s.targets)
            out.extend(s.controls)
        return out

    def gates(self) -> list[Gate]:
        out = []
        k = 0
        for s in self.slots:
            angles = tuple(self.params[k : k + s.n_params]) if s.n_params else s.fixed_params
            k += s.n_params
            out.append(Gate(s.kind, s.targets, s.controls, angles))
        return out

    def clone(self) -> "Gene":
        return Gene(self.slots, self.params.copy())


@dataclass
class Genome:
    """Ordered gene list plus the ancestry chain used for speciation. The
    realized circuit starts from H on every qubit."""

    n_qubits: int
    genes: list[Gene]
    ancestry: tuple[int, ...]
    gate_family: str = "ry"
    species_id: int | None = None
    cached_cost: float | None = None

    @property
    def depth(self) -> int:
        return len(self.genes)

    def two_qubit_count(self) -> int:
        return sum(g.two_qubit_count() for g in self.genes)

    def n_params(self) -> int:
        return sum(g.n_params for g in self.genes)

    def realize(self) -> Circuit:
        gates = [Gate("h", (q,)) for q in range(self.n_qubits)]
        for gene in self.genes:
            gates.extend(gene.gates())
        return Circuit(self.n_qubits, tuple(gates))

    def clone(self, new_ancestor_id: int | None = None) -> "Genome":
        ancestry = self.ancestry + ((new_ancestor_id,) if new_ancestor_id is not None else ())
        return Genome(self.n_qubits, [g.clone() for g in self.genes], ancestry,
                      self.gate_family, None, self.cached_cost)


def _slot_key(slot: Slot) -> tuple:
    return (slot.kind, slot.targets, slot.controls)


def _prev_keys(prev: Gene | None) -> set:
    return set() if prev is None else {_slot_key(s) for s in prev.slots}


def random_gene(n_qubits: int, prev: Gene | None, rng: np.random.Generator,
                gate_family: str = "ry") -> Gene:
    """Random identity-initialized layer covering every qubit once.

    A gate identical to the previous gene's gate on the same qubit(s) is
    redundant and excluded; the identity slot is used only when every
    non-identity choice would be redundant.
    """
    kind = _FAMILIES[gate_family]
    n_angles = 1 if kind == "ry" else 3
    blocked = _prev_keys(prev)
    remaining = [int(q) for q in rng.permutation(n_qubits)]
    slots: list[Slot] = []
    while remaining:
        q = remaining.pop(0)
        options = []
        if (kind, (q,), ()) not in blocked:
            options.append(("single", None))
        if remaining:
            pairings = []
            for partner in remaining:
                for control, target in ((q, partner), (partner, q)):
                    if (kind, (target,), (control,)) not in blocked:
                        pairings.append((control, target))
            if pairings:
                options.append(("pair", pairings))
        if not options:
            slots.append(Slot("i", (q,)))
            continue
        choice = options[int(rng.integers(len(options)))]
        if choice[0] == "single":
            slots.append(Slot(kind, (q,), n_params=n_angles))
        else:
            control, target = choice[1][int(rng.integers(len(choice[1])))]
            slots.append(Slot(kind, (target,), controls=(control,), n_params=n_angles))
            remaining.remove(target if control == q else control)
    gene = Gene(tuple(slots), np.zeros(sum(s.n_params for s in slots)))
    covered = gene.covered_qubits()
    assert sorted(covered) == list(range(n_qubits)), "gene must cover every qubit once"
    return gene


# ---------------------------------------------------------------------------
# Genetic operators
# ---------------------------------------------------------------------------

def topological_search(genome: Genome, rng: np.random.Generator) -> Genome:
    """Append one random identity-initialized gene; the realized state (and so
    the cost) is unchanged."""
    out = genome.clone()
    prev = out.genes[-1] if out.genes else None
    out.genes.append(random_gene(out.n_qubits, prev, rng, out.gate_family))
    return out


def removal(genome: Genome, rng: np.random.Generator) -> Genome:
    """Keep a uniformly drawn prefix of 1..m genes; parameters untouched."""
    if not genome.genes:
        raise GenomeError("cannot remove genes from an empty genome")
    p = int(rng.integers(1, len(genome.genes) + 1))
    out = genome.clone()
    if p < len(out.genes):
        out.genes = out.genes[:p]
        out.cached_cost = None
    return out


def genome_cost(genome: Genome, problem: LinearProblem, kind: CostKind,
                rng: np.random.Generator | None = None) -> float:
    raw = cost_parts(problem, genome.realize(), kind.kind, kind.regime, rng).raw
    return min(max(raw, 0.0), 1.0) if kind.regime.sampled else raw


def _optimize_gene(genome: Genome, idx: int, problem: LinearProblem,
                   optimizer: OptimizerSpec, per_gene_evals: int, kind: CostKind,
                   rng: np.random.Generator | None) -> float:
    """Minimize the genome cost over one gene's parameters (others frozen);
    keeps the incumbent unless the optimizer improves it."""
    gene = genome.genes[idx]
    if gene.n_params == 0 or per_gene_evals < 1:
        cost_now = genome_cost(genome, problem, kind, rng)
        genome.cached_cost = cost_now
        return cost_now

    def objective(theta):
        gene.params[:] = theta
        return genome_cost(genome, problem, kind, rng)

    incumbent = gene.params.copy()
    budget = CostBudget(per_gene_evals)
    result = minimize(objective, incumbent, optimizer, budget)
    before = genome.cached_cost
    if before is not None and result.best_cost > before:
        gene.params[:] = incumbent
        return before
    gene.params[:] = result.best_params
    genome.cached_cost = result.best_cost
    return result.best_cost


def parameter_search(genome: Genome, problem: LinearProblem, optimizer: OptimizerSpec,
                     per_gene_evals: int, kind: CostKind, rng: np.random.Generator,
                     noise_rng: np.random.Generator | None = None) -> Genome:
    """Run the per-gene optimization subroutine on every gene in random order."""
    if not genome.genes:
        raise GenomeError("cannot parameter-search an empty genome")
    out = genome.clone()
    for idx in rng.permutation(len(out.genes)):
        _optimize_gene(out, int(idx), problem, optimizer, per_gene_evals, kind, noise_rng)
    return out


def fitness(genome: Genome, cost_value: float, weights: "FitnessWeights") -> float:
    """cost + depth_weight * gene count + twoqubit_weight * controlled count."""
    if not np.isfinite(cost_value):
        raise GenomeError("fitness needs a finite cost value")
    return float(cost_value
                 + weights.depth_weight * genome.depth
                 + weights.twoqubit_weight * genome.two_qubit_count())


@dataclass(frozen=True)
class FitnessWeights:
    depth_weight: float = 0.01
    twoqubit_weight: float = 0.005

    def __post_init__(self):
        if self.depth_weight < 0 or self.twoqubit_weight < 0:
            raise GenomeError("fitness weights must be non-negative")


# ---------------------------------------------------------------------------
# Speciation and selection
# ---------------------------------------------------------------------------

def lineage_distance(a: Genome, b: Genome) -> float:
    """Average of the two genomes' generation counts back to their most recent
    common ancestor; independent lineages meet at a virtual root."""
    common = 0
    for xa, xb in zip(a.ancestry, b.ancestry):
        if xa != xb:
            break
        common += 1
    return ((len(a.ancestry) - common) + (len(b.ancestry) - common)) / 2.0


def _connected_species(population: list[Genome], threshold: float) -> list[int]:
    n = len(population)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if lineage_distance(population[i], population[j]) <= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    roots = {}
    ids = []
    for i in range(n):
        r = find(i)
        ids.append(roots.setdefault(r, len(roots)))
    return ids


def speciate_and_select(population: list[Genome], fitnesses: list[float],
                        distance_threshold: float, rng: np.random.Generator
                        ) -> tuple[list[int], list[int], list[float]]:
    """Fitness sharing plus inverse-fitness roulette selection.

    Returns (parent indices drawn with replacement, species id per genome,
    species-adjusted fitness per genome).
    """
    if not population:
        raise GenomeError("population is empty")
    species_ids = _connected_species(population, distance_threshold)
    adjusted = []
    for i in range(len(population)):
        members = [fitnesses[j] for j in range(len(population)) if species_ids[j] == species_ids[i]]
        adjusted.append(float(np.mean(members)))
    weights = np.array([1.0 / (SELECTION_EPS + max(a, 0.0)) for a in adjusted])
    probs = weights / weights.sum()
    parents = [int(i) for i in rng.choice(len(population), size=len(population),
                                          replace=True, p=probs)]
    for g, sid in zip(population, species_ids):
        g.species_id = sid
    return parents, species_ids, adjusted


# ---------------------------------------------------------------------------
# Generational loop
# ---------------------------------------------------------------------------

@dataclass
class GaConfig:
    population: int = 20
    generations: int = 20
    p_topological: float = 0.7
    p_parameter: float = 0.2
    p_removal: float = 0.4
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    per_gene_evals: int = 60
    optimizer: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("neldermead"))
    distance_threshold: float = 3.0
    gate_family: str = "ry"
    seed: int = 0


@dataclass
class GaHistoryRow:
    generation: int
    best_fitness: float
    best_true_cost: float
    mean_fitness: float
    species_count: int


@dataclass
class EavqlsResult:
    best_genome: Genome
    best_fitness: float
    best_cost: float
    history: list[GaHistoryRow]


def run_eavqls(problem: LinearProblem, kind: CostKind, config: GaConfig,
               noise_rng: np.random.Generator | None = None) -> EavqlsResult:
    """The full generational loop; returns the fittest genome of the final
    generation with the per-generation history."""
    if config.population < 1 or config.generations < 1:
        raise GenomeError("population and generations must be positive")
    rng = np.random.default_rng([int(config.seed) & 0xFFFFFFFFFFFFFFFF, 7])
    if noise_rng is None and kind.regime.sampled:
        noise_rng = kind.regime.make_rng()
    next_id = iter(range(10**9)).__next__

    population = []
    for _ in range(config.population):
        genome = Genome(problem.n_qubits, [], (next_id(),), config.gate_family)
        population.append(topological_search(genome, rng))

    history: list[GaHistoryRow] = []
    best_genome = population[0]
    best_fit = float("inf")
    for generation in range(config.generations):
        for genome in population:
            _optimize_gene(genome, len(genome.genes) - 1, problem, config.optimizer,
                           config.per_gene_evals, kind, noise_rng)
        fits = [fitness(g, g.cached_cost, config.weights) for g in population]
        best_idx = int(np.argmin(fits))
        species_ids = _connected_species(population, config.distance_threshold)
        history.append(GaHistoryRow(
            generation,
            float(fits[best_idx]),
            float(population[best_idx].cached_cost),
            float(np.mean(fits)),
            len(set(species_ids)),
        ))
        if fits[best_idx] < best_fit:
            best_fit = fits[best_idx]
            best_genome = population[best_idx].clone()
        if generation == config.generations - 1:
            break
        parents, _, _ = speciate_and_select(population, fits, config.distance_threshold, rng)
        next_population = []
        for parent_idx in parents:
            child = population[parent_idx].clone(new_ancestor_id=next_id())
            if child.genes and rng.random() < config.p_removal:
                child = removal(child, rng)
            if rng.random() < config.p_topological:
                child = topological_search(child, rng)
            if child.genes and rng.random() < config.p_parameter:
                child = parameter_search(child, problem, config.optimizer,
                                         config.per_gene_evals, kind, rng, noise_rng)
            next_population.append(child)
        population = next_population

    final_best = history[-1]
    idx = int(np.argmin([fitness(g, g.cached_cost, config.weights) for g in population]))
    return EavqlsResult(population[idx], final_best.best_fitness,
                        final_best.best_true_cost, history)


def genome_to_json(genome: Genome) -> dict:
    genes = []
    for gene in genome.genes:
        genes.append({
            "slots": [
                {"kind": s.kind, "targets": list(s.targets), "controls": list(s.controls),
                 "n_params": s.n_params}
                for s in gene.slots
            ],
            "params": [float(p) for p in gene.params],
        })
    return {"n_qubits": genome.n_qubits, "gate_family": genome.gate_family, "genes": genes}
