"""Monte Carlo ensembles over independent noise paths.

Path ``i`` always draws from the stream ``(base_seed, i)`` and results are
reduced in path order, so every statistic is bit-identical for any number
of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .driver import LEDGER_COLUMNS, SimConfig, solve_additive
from .multiplicative import PicardConfig, apply_pi, fitted_ratio, picard_solve, weighted_distance
from .noise import AdditiveNoise, sample_path
from .step import NonConvergence
from .viscosity import viscosity_sweep

__all__ = [
    "EnsembleStats",
    "EnsembleFailure",
    "Inequality",
    "InequalityReport",
    "run_ensemble",
    "inequality_report",
    "run_picard_ensemble",
    "run_sweep_ensemble",
    "mean_se",
    "SE_BUDGET",
]

log = logging.getLogger(__name__)

SE_BUDGET = 4.0
INCREMENT_NOISE_CONST = 16.0 / 3.0
INCREMENT_INIT_CONST = 4.0 / 3.0


class EnsembleFailure(RuntimeError):
    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


def mean_se(x) -> tuple[float, float]:
    """Compensated mean and standard error (unbiased variance); ``se`` is nan for one sample."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n == 0:
        return math.nan, math.nan
    m = math.fsum(x) / n
    if n < 2:
        return m, math.nan
    var = math.fsum((x - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _collect(results, failure_budget):
    failures = [(i, msg) for i, ok, msg in results if not ok]
    if len(failures) > failure_budget:
        raise EnsembleFailure(
            f"{len(failures)} path(s) failed (budget {failure_budget}); first: path {failures[0][0]}: {failures[0][1]}",
            failures,
        )
    return failures


@dataclass
class EnsembleStats:
    """Per-path ledgers of an ensemble plus the deterministic noise budget."""

    cfg: SimConfig
    base_seed: int
    path_indices: np.ndarray
    ledgers: dict  # column -> array (paths, N+1)
    hs_step: np.ndarray  # int_{t_{k-1}}^{t_k} |Phi|_HS^2 for k = 0..N-1
    hs_total: float  # int_0^T |Phi|_HS^2
    failures: list = field(default_factory=list)

    @property
    def path_count(self) -> int:
        return len(self.path_indices)

    @property
    def tau(self) -> float:
        return self.cfg.tau

    def level_stats(self, column: str):
        """Per-level means and standard errors of a ledger column."""
        data = self.ledgers[column]
        pairs = [mean_se(data[:, k]) for k in range(data.shape[1])]
        return np.array([m for m, _ in pairs]), np.array([s for _, s in pairs])

    @property
    def increment_sums(self) -> np.ndarray:
        return np.array([math.fsum(row) for row in self.ledgers["incr_sq"]])

    def increment_sum_stats(self):
        return mean_se(self.increment_sums)

    def rows(self):
        """``(path, *ledger row)`` in path order."""
        out = []
        for j, i in enumerate(self.path_indices):
            cols = [self.ledgers[c][j] for c in LEDGER_COLUMNS]
            out.extend((int(i),) + tuple(r) for r in zip(*cols))
        return out


def _run_additive_path(args):
    cfg, noise, seed, i = args
    path = sample_path(seed, cfg.steps, noise.M, cfg.T, path_index=i)
    try:
        tr = solve_additive(cfg, path, noise=noise, keep_fields=False)
    except NonConvergence as exc:
        return i, False, f"step {exc.step}: {exc}"
    return i, True, tr.ledger


def run_ensemble(
    cfg: SimConfig,
    path_count: int | None = None,
    base_seed: int | None = None,
    workers: int = 1,
    failure_budget: int = 0,
    noise: AdditiveNoise | None = None,
) -> EnsembleStats:
    path_count = cfg.paths if path_count is None else path_count
    base_seed = cfg.seed if base_seed is None else base_seed
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    if noise is None:
        noise = cfg.additive_noise()
    items = [(cfg, noise, base_seed, i) for i in range(path_count)]
    results = _map(_run_additive_path, items, workers)
    failures = _collect(results, failure_budget)
    good = [(i, led) for i, ok, led in results if ok]
    ledgers = {c: np.stack([led[c] for _, led in good]) for c in LEDGER_COLUMNS}
    tau = cfg.tau
    hs_step = np.array([noise.hs_integral((k - 1) * tau, k * tau) for k in range(cfg.steps)])
    return EnsembleStats(
        cfg=cfg,
        base_seed=base_seed,
        path_indices=np.array([i for i, _ in good]),
        ledgers=ledgers,
        hs_step=hs_step,
        hs_total=noise.hs_integral(0.0, cfg.T),
        failures=failures,
    )


@dataclass
class Inequality:
    name: str
    lhs: float
    rhs: float
    se: float
    passed: bool
    detail: str = ""

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}  {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} "
            f"margin={self.margin:.6g} se={self.se:.3g} (budget {SE_BUDGET:g} se){self.detail}"
        )


@dataclass
class InequalityReport:
    items: list

    @property
    def passed(self) -> bool:
        return all(it.passed for it in self.items)

    def __getitem__(self, name) -> Inequality:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    def failed(self) -> list:
        return [it.name for it in self.items if not it.passed]

    def text(self) -> str:
        return "\n".join(it.line() for it in self.items)


def _judge(name, lhs_paths, rhs_paths, detail=""):
    """Verdict on ``E[lhs] <= E[rhs]`` from per-path values."""
    lhs_paths = np.asarray(lhs_paths, dtype=float)
    rhs_paths = np.broadcast_to(np.asarray(rhs_paths, dtype=float), lhs_paths.shape)
    lhs, _ = mean_se(lhs_paths)
    rhs, _ = mean_se(rhs_paths)
    _, se = mean_se(rhs_paths - lhs_paths)
    # rounding-level slack so that deterministic equalities do not fail
    atol = 1e-10 * (1.0 + abs(rhs) + abs(lhs))
    slack = SE_BUDGET * (0.0 if math.isnan(se) else se) + atol
    return Inequality(name, lhs, rhs, se, bool(rhs - lhs >= -slack), detail)


def _worst(records):
    """The record closest to failing, judged by margin in units of its slack."""
    def score(r):
        return r.margin + SE_BUDGET * (0.0 if math.isnan(r.se) else r.se)

    worst = min(records, key=score)
    worst.passed = all(r.passed for r in records)
    return worst


def inequality_report(stats: EnsembleStats) -> InequalityReport:
    L = stats.ledgers
    tau, N = stats.tau, stats.cfg.steps
    l2, gp = L["l2_sq"], L["grad_pp"]
    items = []

    per_step = []
    for k in range(N):
        lhs = 0.5 * (l2[:, k + 1] - l2[:, k]) + tau * gp[:, k + 1]
        per_step.append(_judge("per_step_energy", lhs, 0.5 * stats.hs_step[k], f" [step {k}]"))
    items.append(_worst(per_step))

    cumulative = []
    dissipation = tau * np.cumsum(gp[:, 1:], axis=1)
    for n in range(N):
        lhs = 0.5 * (l2[:, n + 1] - l2[:, 0]) + dissipation[:, n]
        cumulative.append(_judge("cumulative_energy", lhs, 0.5 * stats.hs_total, f" [level {n + 1}]"))
    items.append(_worst(cumulative))

    rhs = INCREMENT_NOISE_CONST * stats.hs_total + INCREMENT_INIT_CONST * l2[:, 0]
    items.append(_judge("increment_sum", stats.increment_sums, rhs))

    if stats.cfg.eps_viscosity > 0:
        lhs = tau * np.sum(l2[:, 1:], axis=1)
        rhs = stats.cfg.T * (l2[:, 0] + stats.hs_total)
        items.append(_judge("viscous_uniform_bound", lhs, rhs))
    return InequalityReport(items)


# -- multiplicative and sweep ensembles ---------------------------------------


def _run_picard_path(args):
    pcfg, seed, i, floor = args
    base = pcfg.base
    path = sample_path(seed, base.steps, pcfg.noise.M, base.T, path_index=i)
    try:
        tr, trace = picard_solve(pcfg, path)
        again = apply_pi(pcfg, path, tr, u0=tr.initial)
    except NonConvergence as exc:
        return i, False, f"step {exc.step}: {exc}"
    except RuntimeError as exc:
        return i, False, str(exc)
    residual = math.sqrt(weighted_distance(again, tr, pcfg.weight))
    return i, True, {
        "distances": list(trace.distances),
        "wall_times": list(trace.wall_times),
        "ratio": fitted_ratio(trace.distances, floor=floor),
        "fixed_point_residual": residual,
        "ledger": tr.ledger,
    }


def run_picard_ensemble(
    pcfg: PicardConfig,
    path_count: int,
    base_seed: int | None = None,
    workers: int = 1,
    failure_budget: int = 0,
    ratio_floor: float | None = None,
) -> dict:
    """Picard fixed points on many paths: traces, fitted ratios, fixed-point residuals."""
    base_seed = pcfg.base.seed if base_seed is None else base_seed
    if ratio_floor is None:
        ratio_floor = (100.0 * pcfg.base.tol) ** 2
    items = [(pcfg, base_seed, i, ratio_floor) for i in range(path_count)]
    results = _map(_run_picard_path, items, workers)
    failures = _collect(results, failure_budget)
    good = [(i, r) for i, ok, r in results if ok]
    ratios = np.array([r["ratio"] for _, r in good])
    finite = ratios[np.isfinite(ratios)]
    return {
        "path_indices": [i for i, _ in good],
        "traces": [r["distances"] for _, r in good],
        "wall_times": [r["wall_times"] for _, r in good],
        "ratios": ratios,
        "median_ratio": float(np.median(finite)) if finite.size else math.nan,
        "fixed_point_residuals": np.array([r["fixed_point_residual"] for _, r in good]),
        "ledgers": {c: np.stack([r["ledger"][c] for _, r in good]) for c in LEDGER_COLUMNS},
        "contraction_bound": pcfg.L / pcfg.weight,
        "failures": failures,
    }


def _run_sweep_path(args):
    cfg, noise, eps_list, seed, i = args
    path = sample_path(seed, cfg.steps, noise.M, cfg.T, path_index=i)
    try:
        rep = viscosity_sweep(cfg, path, eps_list, noise=noise)
    except NonConvergence as exc:
        return i, False, f"step {exc.step}: {exc}"
    return i, True, rep


def run_sweep_ensemble(
    cfg: SimConfig,
    eps_list,
    path_count: int,
    base_seed: int | None = None,
    workers: int = 1,
    failure_budget: int = 0,
    noise: AdditiveNoise | None = None,
) -> dict:
    """Viscosity sweeps on many paths, with the ensemble-level bound checks."""
    base_seed = cfg.seed if base_seed is None else base_seed
    if noise is None:
        noise = cfg.additive_noise()
    items = [(cfg, noise, tuple(eps_list), base_seed, i) for i in range(path_count)]
    results = _map(_run_sweep_path, items, workers)
    failures = _collect(results, failure_budget)
    reports = [r for _, ok, r in results if ok]
    p = cfg.p
    C1 = mean_se([r.C1 for r in reports])[0]
    limit = (0.5 * C1) ** ((p - 1.0) / p)
    bound = np.array([r.bound_quantity for r in reports])  # (paths, eps)
    l2int = np.array([r.l2_time_integral for r in reports])
    checks = []
    for j, eps in enumerate(eps_list):
        m, se = mean_se(bound[:, j])
        slack = SE_BUDGET * (0.0 if math.isnan(se) else se)
        checks.append(Inequality(f"bound_quantity[eps={eps:g}]", m, limit, se, bool(m <= limit + slack)))
        rhs = cfg.T * np.array([r.C1 for r in reports])
        checks.append(_judge(f"uniform_l2[eps={eps:g}]", l2int[:, j], rhs))
    return {
        "eps": list(eps_list),
        "reports": reports,
        "decreasing_fraction": float(np.mean([r.decreasing() for r in reports])),
        "bound_limit": limit,
        "checks": InequalityReport(checks),
        "failures": failures,
    }
