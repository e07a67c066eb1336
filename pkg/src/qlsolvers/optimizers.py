"""Classical optimizers over black-box cost callables with budget accounting.

Every cost invocation passes through the shared CostBudget, so recorded
evaluation counts equal true call counts. All methods stop gracefully when the
budget runs out and return the best point evaluated so far.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import BudgetExhaustedError, CostBudget, CostError

OPTIMIZER_KINDS = ("spsa", "bfgs", "powell", "neldermead")

SPSA_DEFAULTS = {"a": 0.2, "c": 0.1, "alpha": 0.602, "gamma": 0.101}


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise OptimizerError(
                f"unknown optimizer {self.kind!r}; known: {', '.join(OPTIMIZER_KINDS)}"
            )


@dataclass
class OptimResult:
    best_params: np.ndarray
    best_cost: float
    trace: list[tuple[int, float]]
    terminated_by: str  # "Budget" | "Tolerance" | "MaxIter"


class _Counted:
    """Budget-charging, trace-recording choke point around the cost callable."""

    def __init__(self, fn, budget: CostBudget, trace: list):
        self.fn = fn
        self.budget = budget
        self.trace = trace
        self.best_x: np.ndarray | None = None
        self.best_f = np.inf

    def _record(self, x: np.ndarray, f: float) -> None:
        self.trace.append((len(self.trace) + 1, f))
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        self.budget.charge(1)
        try:
            f = float(self.fn(x))
        except CostError as exc:
            raise CostError(f"{exc} (at point {np.array2string(x, precision=6)})") from exc
        self._record(x, f)
        return f


def _seed_key(seed: int, *extra: int) -> list[int]:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, *extra]


# ---------------------------------------------------------------------------
# SPSA
# ---------------------------------------------------------------------------

def _spsa_effective(spec: OptimizerSpec, planned: int) -> dict:
    hp = dict(SPSA_DEFAULTS)
    hp["A"] = 0.1 * planned
    hp.update(spec.hyperparams)
    if hp["a"] <= 0 or hp["c"] <= 0:
        raise OptimizerError("SPSA gains a and c must be positive")
    if not (0 < hp["alpha"] <= 1 and 0 < hp["gamma"] <= 1):
        raise OptimizerError("SPSA decay exponents must lie in (0, 1]")
    return hp


def spsa_step(params: np.ndarray, cost, k: int, spec: OptimizerSpec,
              budget: CostBudget) -> tuple[np.ndarray, list[tuple[np.ndarray, float]]]:
    """One simultaneous-perturbation update.

    Draws a Rademacher perturbation from a per-iteration RNG, forms the usual
    two-sided gradient estimate, and returns the updated point plus the two
    evaluated (point, cost) pairs. Charges exactly 2 evaluations, atomically:
    an insufficient budget aborts the step before any evaluation.
    """
    params = np.asarray(params, dtype=float)
    if budget.remaining < 2:
        raise BudgetExhaustedError("SPSA step aborted: 2 evaluations needed")
    hp = _spsa_effective(spec, planned=int(spec.hyperparams.get("planned", k + 1)))
    a_k = hp["a"] / (k + 1 + hp["A"]) ** hp["alpha"]
    c_k = max(hp["c"] / (k + 1) ** hp["gamma"], 1e-12)
    rng = np.random.default_rng(_seed_key(spec.seed, 1000003, k))
    delta = rng.choice([-1.0, 1.0], size=params.shape)
    budget.charge(2)
    x_plus = params + c_k * delta
    x_minus = params - c_k * delta
    f_plus = float(cost(x_plus))
    f_minus = float(cost(x_minus))
    ghat = (f_plus - f_minus) / (2.0 * c_k) * delta  # 1/delta_i == delta_i
    return params - a_k * ghat, [(x_plus, f_plus), (x_minus, f_minus)]


def _run_spsa(counted: _Counted, x0, spec, budget) -> tuple[np.ndarray, str]:
    remaining = budget.remaining
    planned = max((remaining - 1) // 2, remaining // 2 if remaining < 3 else 0)
    planned = min(planned, int(spec.hyperparams.get("max_iter", planned)))
    eff_spec = OptimizerSpec(
        "spsa",
        {**_spsa_effective(spec, planned), "planned": planned, **spec.hyperparams},
        spec.seed,
    )
    params = np.array(x0, dtype=float)
    for k in range(planned):
        if budget.remaining < 2:
            break
        params, evals = spsa_step(params, counted.fn, k, eff_spec, budget)
        for x, f in evals:
            counted._record(x, f)
    if budget.remaining >= 1:
        counted(params)  # score the final iterate
    reason = "MaxIter" if planned < (remaining - 1) // 2 else "Budget"
    return params, reason


# ---------------------------------------------------------------------------
# BFGS with Armijo backtracking
# ---------------------------------------------------------------------------

def _fd_gradient(counted, x, f0, step):
    g = np.zeros_like(x)
    for k in range(len(x)):
        xp = x.copy()
        xp[k] += step
        xm = x.copy()
        xm[k] -= step
        g[k] = (counted(xp) - counted(xm)) / (2.0 * step)
    return g


def _run_bfgs(counted, x0, spec, budget, gradient) -> tuple[np.ndarray, str]:
    hp = spec.hyperparams
    gtol = hp.get("gtol", 1e-8)
    max_iter = int(hp.get("max_iter", 10**6))
    fd_step = hp.get("fd_step", 1e-6)
    c1 = hp.get("armijo_c1", 1e-4)
    max_backtracks = int(hp.get("max_backtracks", 40))

    def grad_at(x):
        if gradient is not None:
            return np.asarray(gradient(x), dtype=float)
        return _fd_gradient(counted, x, None, fd_step)

    x = np.array(x0, dtype=float)
    f = counted(x)
    g = grad_at(x)
    h = np.eye(len(x))
    for _ in range(max_iter):
        if np.linalg.norm(g, np.inf) <= gtol:
            return x, "Tolerance"
        p = -h @ g
        slope = float(g @ p)
        if slope >= 0:  # stale curvature; fall back to steepest descent
            p = -g
            slope = float(g @ p)
            h = np.eye(len(x))
        t = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + t * p
            f_new = counted(x_new)
            if f_new <= f + c1 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return x, "Tolerance"
        g_new = grad_at(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            i_mat = np.eye(len(x))
            h = (i_mat - rho * np.outer(s, y)) @ h @ (i_mat - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    return x, "MaxIter"


# ---------------------------------------------------------------------------
# Powell direction-set with golden-section line minimization
# ---------------------------------------------------------------------------

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_section(counted, x, d, lo, hi, tol):
    """Golden-section minimum of t -> f(x + t d) on [lo, hi]."""
    a, b = lo, hi
    c_pt = b - _GOLDEN * (b - a)
    d_pt = a + _GOLDEN * (b - a)
    f_c = counted(x + c_pt * d)
    f_d = counted(x + d_pt * d)
    while abs(b - a) > tol:
        if f_c < f_d:
            b, d_pt, f_d = d_pt, c_pt, f_c
            c_pt = b - _GOLDEN * (b - a)
            f_c = counted(x + c_pt * d)
        else:
            a, c_pt, f_c = c_pt, d_pt, f_d
            d_pt = a + _GOLDEN * (b - a)
            f_d = counted(x + d_pt * d)
    t = c_pt if f_c < f_d else d_pt
    f_t = f_c if f_c < f_d else f_d
    return t, f_t


def _line_min(counted, x, d, f0, tol, step):
    """Bracket along +-d from t = 0, then golden-section refine."""
    t1 = step
    f1 = counted(x + t1 * d)
    if f1 >= f0:
        t1 = -step
        f1 = counted(x + t1 * d)
    if f1 >= f0:  # minimum near 0; refine the small bracket
        t, f_t = _golden_section(counted, x, d, -step, step, tol)
    else:
        t_prev, f_prev = 0.0, f0
        t_cur, f_cur = t1, f1
        for _ in range(40):
            t_next = 2.0 * t_cur
            f_next = counted(x + t_next * d)
            if f_next >= f_cur:
                break
            t_prev, f_prev = t_cur, f_cur
            t_cur, f_cur = t_next, f_next
        else:
            t_next, f_next = 2.0 * t_cur, f_cur
        lo, hi = (t_prev, t_next) if t_prev < t_next else (t_next, t_prev)
        t, f_t = _golden_section(counted, x, d, lo, hi, tol)
    if f_t < f0:
        return x + t * d, f_t
    return x, f0


def _run_powell(counted, x0, spec, budget) -> tuple[np.ndarray, str]:
    hp = spec.hyperparams
    ftol = hp.get("ftol", 1e-10)
    line_tol = hp.get("line_tol", 1e-6)
    step = hp.get("line_step", 0.5)
    max_iter = int(hp.get("max_iter", 10**6))
    n = len(x0)
    dirs = [np.eye(n)[k] for k in range(n)]
    x = np.array(x0, dtype=float)
    f = counted(x)
    for _ in range(max_iter):
        x_start, f_start = x.copy(), f
        biggest_dec, biggest_idx = 0.0, 0
        for i, d in enumerate(dirs):
            f_before = f
            x, f = _line_min(counted, x, d, f, line_tol, step)
            if f_before - f > biggest_dec:
                biggest_dec, biggest_idx = f_before - f, i
        if 2.0 * (f_start - f) <= ftol * (abs(f_start) + abs(f) + 1e-20):
            return x, "Tolerance"
        new_dir = x - x_start
        norm = np.linalg.norm(new_dir)
        if norm > 0:
            dirs[biggest_idx] = dirs[-1]
            dirs[-1] = new_dir / norm
    return x, "MaxIter"


# ---------------------------------------------------------------------------
# Nelder-Mead simplex
# ---------------------------------------------------------------------------

def _run_nelder_mead(counted, x0, spec, budget) -> tuple[np.ndarray, str]:
    hp = spec.hyperparams
    scale = hp.get("simplex_scale", 0.25)
    ftol = hp.get("ftol", 1e-12)
    xtol = hp.get("xtol", 1e-9)
    max_iter = int(hp.get("max_iter", 10**6))
    n = len(x0)
    verts = [np.array(x0, dtype=float)]
    for k in range(n):
        v = np.array(x0, dtype=float)
        v[k] += scale
        verts.append(v)
    fvals = [counted(v) for v in verts]
    for _ in range(max_iter):
        order = np.argsort(fvals, kind="stable")
        verts = [verts[i] for i in order]
        fvals = [fvals[i] for i in order]
        if (fvals[-1] - fvals[0] < ftol
                and max(np.max(np.abs(v - verts[0])) for v in verts[1:]) < xtol):
            return verts[0], "Tolerance"
        centroid = np.mean(verts[:-1], axis=0)
        xr = centroid + (centroid - verts[-1])
        fr = counted(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - verts[-1])
            fe = counted(xe)
            verts[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fvals[-2]:
            verts[-1], fvals[-1] = xr, fr
        else:
            inside = fr >= fvals[-1]
            xc = centroid + (-0.5 if inside else 0.5) * (centroid - verts[-1])
            fc = counted(xc)
            if fc < min(fr, fvals[-1]):
                verts[-1], fvals[-1] = xc, fc
            else:  # shrink toward the best vertex
                for i in range(1, n + 1):
                    verts[i] = verts[0] + 0.5 * (verts[i] - verts[0])
                    fvals[i] = counted(verts[i])
    return verts[int(np.argmin(fvals))], "MaxIter"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def minimize(cost, x0, spec: OptimizerSpec, budget: CostBudget,
             gradient=None) -> OptimResult:
    """Minimize the cost callable within the evaluation budget.

    SPSA consumes 2 evaluations per iteration; BFGS uses the supplied gradient
    callable, which is expected to charge the shared budget itself (the
    parameter-shift gradient does), or central finite differences through the
    counted cost when none is given. Returns the best point among all
    evaluated ones, with the full evaluation trace.
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise OptimizerError("initial point contains non-finite values")
    if budget.remaining <= 0:
        raise BudgetExhaustedError("optimizer started with a zero budget")

    trace: list[tuple[int, float]] = []
    counted = _Counted(cost, budget, trace)
    runners = {
        "spsa": lambda: _run_spsa(counted, x0, spec, budget),
        "bfgs": lambda: _run_bfgs(counted, x0, spec, budget, gradient),
        "powell": lambda: _run_powell(counted, x0, spec, budget),
        "neldermead": lambda: _run_nelder_mead(counted, x0, spec, budget),
    }
    try:
        _, reason = runners[spec.kind]()
    except BudgetExhaustedError:
        reason = "Budget"
    if counted.best_x is None:  # nothing evaluated (possible only via errors)
        raise OptimizerError("no evaluation completed")
    return OptimResult(counted.best_x, counted.best_f, trace, reason)
