"""Seeded experiment campaigns: per-restart runs, persisted traces, and
deterministic summaries with box-plot/convergence plot data emission."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ansatz import adiabatic_ansatz, layered_ansatz
from .cost import CostBudget, CostKind
from .cqs import BreadthFirst, FixedNodes, Heuristic, run_cqs, run_lavqls
from .eavqls import FitnessWeights, GaConfig, genome_to_json, run_eavqls
from .optimizers import OPTIMIZER_KINDS, OptimizerSpec
from .problems import LinearProblem, problem_from_json, registry_get, REGISTRY_IDS
from .sim import NoiseRegime
from .vqls import AdiabaticSchedule, VqlsRun, solve_aavqls, solve_vqls, steps_to_csv_rows

METHODS = ("vqls", "aavqls", "eavqls", "cqs", "lavqls")
DEFAULT_SHOTS = 10_000
CQS_DEFAULT_SHOTS = 245_760
VQLS_BUDGETS = {"A1": 1000, "A2": 1500, "A3": 2000}
DEFAULT_OPTIMIZER = {"vqls": "bfgs", "aavqls": "powell", "eavqls": "neldermead",
                     "lavqls": "powell"}
_SEED_MASK = 0xFFFFFFFFFFFFFFFF


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2 in the CLI)."""


class ExperimentError(RuntimeError):
    """Runtime failure while executing or summarizing a campaign."""


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & _SEED_MASK, stream])


@dataclass
class ExperimentConfig:
    method: str
    problem: str | dict = "A1"
    noise: str | dict = "exact"
    optimizer: dict = field(default_factory=dict)
    budget: int | None = None
    restarts: int = 1
    base_seed: int = 0
    cost: str = "local"
    method_params: dict = field(default_factory=dict)
    output_dir: str = "runs"
    jobs: int = 1
    campaign_id: str | None = None

    @classmethod
    def from_json(cls, doc: str | dict) -> "ExperimentConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return asdict(self)


def parse_noise(spec: str | dict, seed: int) -> NoiseRegime:
    """Parse "exact", "shots:N", "depol:N:p", or an equivalent dict."""
    if isinstance(spec, dict):
        mode = spec.get("mode", "exact")
        if mode in ("depol", "depolarizing"):
            mode = "shots_depolarizing"
        return NoiseRegime(mode, int(spec.get("n_shots", DEFAULT_SHOTS)),
                           float(spec.get("p", 0.005)), rng_seed=seed)
    parts = str(spec).split(":")
    if parts[0] == "exact" and len(parts) == 1:
        return NoiseRegime("exact", rng_seed=seed)
    if parts[0] == "shots" and len(parts) == 2:
        return NoiseRegime("shots", int(parts[1]), rng_seed=seed)
    if parts[0] == "depol" and len(parts) in (2, 3):
        p = float(parts[2]) if len(parts) == 3 else 0.005
        return NoiseRegime("shots_depolarizing", int(parts[1]), p, rng_seed=seed)
    raise ConfigError(
        f"cannot parse noise {spec!r} (expected exact, shots:N, or depol:N:p)"
    )


def noise_tag(spec: str | dict) -> str:
    if isinstance(spec, dict):
        mode = spec.get("mode", "exact")
        if mode == "exact":
            return "exact"
        short = "depol" if mode.startswith("shots_dep") or mode.startswith("depol") else "shots"
        return f"{short}{spec.get('n_shots', DEFAULT_SHOTS)}"
    return str(spec).replace(":", "")


def resolve_problem(spec: str | dict) -> LinearProblem:
    if isinstance(spec, str):
        return registry_get(spec)
    return problem_from_json(spec)


def build_optimizer(doc: dict, seed: int, default_kind: str) -> tuple[OptimizerSpec, dict]:
    """OptimizerSpec plus report notes; requesting cobyla substitutes
    Nelder-Mead and records the substitution."""
    notes = {}
    kind = str(doc.get("kind", default_kind)).lower()
    if kind == "cobyla":
        notes["optimizer_substitution"] = "cobyla->neldermead"
        kind = "neldermead"
    if kind not in OPTIMIZER_KINDS:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    spec = OptimizerSpec(kind, dict(doc.get("params", {})), int(doc.get("seed", seed)))
    return spec, notes


def validate_config(config: ExperimentConfig) -> None:
    """Collect every config problem at once; raise with the full list."""
    errors = []
    if config.method not in METHODS:
        errors.append(f"method must be one of {METHODS}, got {config.method!r}")
    if isinstance(config.problem, str) and config.problem not in REGISTRY_IDS:
        errors.append(f"unknown problem id {config.problem!r}")
    try:
        parse_noise(config.noise, 0)
    except (ConfigError, ValueError) as exc:
        errors.append(str(exc))
    if config.cost not in ("local", "global"):
        errors.append(f"cost must be 'local' or 'global', got {config.cost!r}")
    if config.restarts < 1:
        errors.append("restarts must be positive")
    if config.budget is not None and config.budget < 1:
        errors.append("budget must be positive when given")
    if config.jobs < 1:
        errors.append("jobs must be positive")
    opt_kind = str(config.optimizer.get("kind", "bfgs")).lower()
    if opt_kind not in OPTIMIZER_KINDS + ("cobyla",):
        errors.append(f"unknown optimizer kind {opt_kind!r}")
    if errors:
        raise ConfigError("; ".join(errors))


@dataclass
class RunReport:
    method: str
    restart: int
    seed: int
    final_cost: float
    final_params: list | None
    trace: list
    wall_ms: float
    terminated_by: str
    notes: dict
    config: dict


def default_budget(config: ExperimentConfig, problem: LinearProblem) -> int:
    if config.budget is not None:
        return config.budget
    if config.method == "vqls":
        return VQLS_BUDGETS.get(problem.id, 1000)
    if config.method == "aavqls":
        return 2000
    return 1000


def _termination_cost(problem, ansatz, params, cost_name, regime, seed):
    """Reported termination value: one fresh estimate at the returned point.

    A minimum over clamped noisy trace values is biased toward zero, so the
    report re-measures the cost once on a dedicated deterministic stream (not
    charged to the optimizer budget) and also records the exact-mode value.
    """
    from .cost import cost_parts
    from .sim import NoiseRegime

    circ = ansatz.bind(np.asarray(params, dtype=float))
    final = cost_parts(problem, circ, cost_name, regime, rng_for(seed, 2)).raw
    exact_val = cost_parts(problem, circ, cost_name, NoiseRegime("exact")).raw
    return float(final), {"final_cost_exact": float(exact_val)}


def run_single(config: ExperimentConfig, restart: int) -> RunReport:
    """One seeded restart of the configured method (seed = base_seed + restart)."""
    seed = config.base_seed + restart
    problem = resolve_problem(config.problem)
    regime = parse_noise(config.noise, seed=seed)
    kind = CostKind(config.cost, regime)
    mp = config.method_params
    budget_n = default_budget(config, problem)
    started = time.perf_counter()
    notes: dict = {}
    final_params = None

    if config.method == "vqls":
        spec, notes = build_optimizer(config.optimizer, seed, DEFAULT_OPTIMIZER["vqls"])
        layers = int(mp.get("layers", problem.n_qubits))
        ansatz = layered_ansatz(problem.n_qubits, layers, mp.get("gate_family", "ry_cx"))
        x0 = rng_for(seed, 0).uniform(-np.pi, np.pi, ansatz.n_params)
        run = VqlsRun(problem, ansatz, kind, spec, CostBudget(budget_n), x0)
        res = solve_vqls(run, rng=rng_for(seed, 1))
        final_params = [float(v) for v in res.opt.best_params]
        final_cost, extra = _termination_cost(problem, ansatz, res.opt.best_params,
                                              config.cost, regime, seed)
        notes.update(extra, best_observed_cost=res.opt.best_cost, fidelity=res.fidelity)
        trace = [float(v) for v in res.raw_trace]
        terminated = res.opt.terminated_by

    elif config.method == "aavqls":
        spec, notes = build_optimizer(config.optimizer, seed, DEFAULT_OPTIMIZER["aavqls"])
        t_steps = int(mp.get("T", 10))
        layers = int(mp.get("layers", problem.n_qubits))
        ansatz = adiabatic_ansatz(problem.n_qubits, layers, problem.b_prep,
                                  gate_family=mp.get("gate_family", "ry_cx"))
        schedule = AdiabaticSchedule.from_total(t_steps, budget_n)
        res = solve_aavqls(problem, ansatz, schedule, spec, kind, rng=rng_for(seed, 1))
        final_params = [float(v) for v in res.final.best_params]
        final_cost, extra = _termination_cost(problem, ansatz, res.final.best_params,
                                              config.cost, regime, seed)
        notes.update(extra, best_observed_cost=res.final.best_cost, fidelity=res.fidelity)
        trace = [float(v) for v in res.raw_trace]
        terminated = res.final.terminated_by
        notes["steps"] = steps_to_csv_rows(res.steps)
        notes["total_evals"] = res.total_evals

    elif config.method == "eavqls":
        spec, notes = build_optimizer(config.optimizer, seed, DEFAULT_OPTIMIZER["eavqls"])
        ga = GaConfig(
            population=int(mp.get("population", 20)),
            generations=int(mp.get("generations", 20)),
            p_topological=float(mp.get("p_topological", 0.7)),
            p_parameter=float(mp.get("p_parameter", 0.2)),
            p_removal=float(mp.get("p_removal", 0.4)),
            weights=FitnessWeights(float(mp.get("depth_weight", 0.01)),
                                   float(mp.get("twoqubit_weight", 0.005))),
            per_gene_evals=int(mp.get("per_gene_evals", 60)),
            optimizer=spec,
            distance_threshold=float(mp.get("distance_threshold", 3.0)),
            gate_family=mp.get("gate_family", "ry"),
            seed=seed,
        )
        res = run_eavqls(problem, kind, ga, noise_rng=rng_for(seed, 1))
        final_cost = res.best_cost
        trace = [float(r.best_true_cost) for r in res.history]
        terminated = "MaxIter"
        notes["ga_history"] = [asdict(r) for r in res.history]
        notes["best_genome"] = genome_to_json(res.best_genome)

    elif config.method == "cqs":
        mode_name = mp.get("mode", "breadth_first")
        if mode_name == "breadth_first":
            mode = BreadthFirst(int(mp.get("depth", 2)))
        elif mode_name == "heuristic":
            mode = Heuristic(int(mp.get("max_nodes", 5)))
        elif mode_name == "fixed":
            mode = FixedNodes(tuple(tuple(s) for s in mp.get("sequences", [[]])))
        else:
            raise ConfigError(f"unknown cqs mode {mode_name!r}")
        res = run_cqs(problem, mode, regime, rng=rng_for(seed, 1))
        final_cost = res.state.l_r
        trace = [float(l) for _, l in res.history]
        terminated = "MaxIter"
        notes["node_sequences"] = [list(n.term_sequence) for n in res.state.nodes]
        notes["alpha"] = [[float(a.real), float(a.imag)] for a in res.state.alpha]

    elif config.method == "lavqls":
        spec, notes = build_optimizer(config.optimizer, seed, DEFAULT_OPTIMIZER["lavqls"])
        res = run_lavqls(
            problem,
            n_ansatze=int(mp.get("n_ansatze", 5)),
            layers=int(mp.get("layers", 3)),
            method=mp.get("variant", "m1"),
            rounds=int(mp.get("rounds", 3)),
            optimizer=spec,
            regime=regime,
            seed=seed,
            member_evals=int(mp.get("member_evals", 60)),
            total_evals=budget_n,
        )
        final_cost = res.state.l_r
        final_params = [[float(v) for v in t] for t in res.thetas]
        trace = [float(v) for v in res.history]
        terminated = "MaxIter"
        notes["alpha"] = [[float(a.real), float(a.imag)] for a in res.state.alpha]

    else:
        raise ConfigError(f"unknown method {config.method!r}")

    wall_ms = (time.perf_counter() - started) * 1000.0
    return RunReport(config.method, restart, seed, float(final_cost), final_params,
                     trace, wall_ms, terminated, notes, config.to_json())


def _run_single_dict(config_doc: dict, restart: int) -> dict:
    report = run_single(ExperimentConfig.from_json(config_doc), restart)
    return asdict(report)


# ---------------------------------------------------------------------------
# Campaign orchestration and persistence
# ---------------------------------------------------------------------------

def campaign_id_for(config: ExperimentConfig) -> str:
    if config.campaign_id:
        return config.campaign_id
    problem_tag = config.problem if isinstance(config.problem, str) else "custom"
    opt_tag = str(config.optimizer.get("kind", DEFAULT_OPTIMIZER.get(config.method, "none")))
    return f"{config.method}-{problem_tag}-{noise_tag(config.noise)}-{opt_tag}-s{config.base_seed}"


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _best_so_far(trace: list[float]) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(trace, dtype=float))


def summarize(reports: list[dict], config: ExperimentConfig) -> dict:
    finals = [r["final_cost"] for r in sorted(reports, key=lambda r: r["restart"])]
    qs = np.percentile(np.asarray(finals), [0, 25, 50, 75, 100]) if finals else []
    max_len = max((len(r["trace"]) for r in reports), default=0)
    mean_trace = []
    if max_len:
        acc = np.zeros(max_len)
        for r in reports:
            best = _best_so_far(r["trace"]) if r["trace"] else np.array([np.nan])
            padded = np.concatenate([best, np.full(max_len - len(best), best[-1])])
            acc += padded
        mean = acc / len(reports)
        mean_trace = [[i + 1, float(v)] for i, v in enumerate(mean)]
    return {
        "campaign_id": campaign_id_for(config),
        "config": config.to_json(),
        "n_runs": len(reports),
        "final_costs": [float(v) for v in finals],
        "quartiles": {
            "min": float(qs[0]), "q1": float(qs[1]), "median": float(qs[2]),
            "q3": float(qs[3]), "max": float(qs[4]),
        } if len(finals) else {},
        "mean_trace": mean_trace,
    }


@dataclass
class CampaignResult:
    directory: Path
    reports: list[dict]
    summary: dict


def run_campaign(config: ExperimentConfig) -> CampaignResult:
    """Execute (or resume) every restart, persist traces, write the summary.

    Restart k uses seed base_seed + k. Existing run files are reused, making a
    partially completed campaign resumable. Restarts run in parallel when
    jobs > 1; the summary is written once afterwards and is byte-identical
    across re-runs of the same configuration.
    """
    validate_config(config)
    out = Path(config.output_dir) / campaign_id_for(config)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "config.json", config.to_json())

    pending = [k for k in range(config.restarts) if not (out / f"run-{k}.json").exists()]
    if pending:
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                futures = {k: pool.submit(_run_single_dict, config.to_json(), k)
                           for k in pending}
                fresh = {k: f.result() for k, f in futures.items()}
        else:
            fresh = {k: _run_single_dict(config.to_json(), k) for k in pending}
        for k, report in fresh.items():
            _dump_json(out / f"run-{k}.json", report)
            with (out / f"run-{k}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["eval_index", "cost"])
                for i, value in enumerate(report["trace"], start=1):
                    writer.writerow([i, repr(float(value))])

    reports = []
    for k in range(config.restarts):
        reports.append(json.loads((out / f"run-{k}.json").read_text()))
    summary = summarize(reports, config)
    _dump_json(out / "summary.json", summary)
    return CampaignResult(out, reports, summary)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

def emit_plotdata(root: str | Path, out_dir: str | Path | None = None,
                  top_k: int | None = None) -> tuple[Path, Path]:
    """Tidy CSVs for box plots (per-restart finals) and convergence curves.

    top_k keeps the k lowest final costs per campaign arm (the paper reports
    "top attempts" this way).
    """
    root = Path(root)
    summaries = sorted(root.glob("**/summary.json"))
    if not summaries:
        raise ExperimentError(f"no summary.json files under {root}")
    out_dir = Path(out_dir) if out_dir is not None else root
    out_dir.mkdir(parents=True, exist_ok=True)

    finals_path = out_dir / "plot_finals.csv"
    curves_path = out_dir / "plot_curves.csv"
    with finals_path.open("w", newline="") as fh_f, curves_path.open("w", newline="") as fh_c:
        wf = csv.writer(fh_f)
        wc = csv.writer(fh_c)
        wf.writerow(["method", "problem", "noise", "optimizer", "restart", "final_cost"])
        wc.writerow(["method", "problem", "noise", "optimizer", "eval_index", "mean_cost"])
        for spath in summaries:
            doc = json.loads(spath.read_text())
            cfg = doc.get("config", {})
            method = cfg.get("method", "?")
            problem = cfg.get("problem", "?")
            problem = problem if isinstance(problem, str) else "custom"
            noise = noise_tag(cfg.get("noise", "exact"))
            opt = str(cfg.get("optimizer", {}).get("kind",
                                                   DEFAULT_OPTIMIZER.get(method, "none")))
            rows = list(enumerate(doc.get("final_costs", [])))
            if top_k is not None:
                rows = sorted(rows, key=lambda kv: kv[1])[:top_k]
                rows.sort(key=lambda kv: kv[0])
            for restart, value in rows:
                wf.writerow([method, problem, noise, opt, restart, repr(float(value))])
            for idx, value in doc.get("mean_trace", []):
                wc.writerow([method, problem, noise, opt, idx, repr(float(value))])
    return finals_path, curves_path
