"""The tabular verification suite behind ``exdm lab``: every check returns a JSON-ready record
with a ``passed`` flag, and ``run_lab`` bundles them into one report."""
from __future__ import annotations

import math

import numpy as np

from .config import LabConfig
from .tabular import (
    bound_check,
    enumerate_det_policies,
    in_hull,
    max_entropy_policy,
    occupancy,
    random_mdp,
    simplex_volume,
    simplex_volume_mc,
    soft_optimal_value,
    soft_policy_iteration,
    TabularMDP,
    wendel_exact_1d,
    wendel_mc,
)

BETAS = (0.1, 1.0, 10.0)


def check_wendel(cfg: LabConfig, rng, n_se: float) -> dict:
    rows = []
    for M in cfg.wendel_M:
        p, se = wendel_mc(2, int(M), cfg.wendel_trials, rng)
        exact = wendel_exact_1d(int(M))
        rows.append({"M": int(M), "estimate": p, "se": se, "exact": exact, "ok": abs(p - exact) <= n_se * se})
    return {"name": "wendel_1d", "passed": all(r["ok"] for r in rows), "rows": rows}


def check_volume(cfg: LabConfig, rng) -> dict:
    rows = []
    for S in cfg.volume_S:
        est, se = simplex_volume_mc(int(S), cfg.volume_samples, rng)
        exact = simplex_volume(int(S))
        formula = math.sqrt(S) / math.factorial(int(S) - 1)
        rows.append({"S": int(S), "formula": exact, "mc": est, "se": se,
                     "ok": exact == formula and abs(est / exact - 1) < 0.01})
    return {"name": "simplex_volume", "passed": all(r["ok"] for r in rows), "rows": rows}


def check_bounds(cfg: LabConfig, rng, n_se: float) -> dict:
    rows = []
    pairs = list(zip(cfg.bound_cases[::2], cfg.bound_cases[1::2]))
    for S, M in pairs:
        r = bound_check(int(S), int(M), cfg.bound_trials, rng)
        ok = (not r.precondition) or r.estimate >= r.bound - n_se * r.se
        rows.append({"S": r.S, "M": r.M, "u": r.u, "v": r.v, "bound": r.bound, "precondition": r.precondition,
                     "estimate": r.estimate, "se": r.se, "ok": ok})
    return {"name": "coverage_bound", "passed": all(r["ok"] for r in rows), "rows": rows}


def check_hull(cfg: LabConfig, rng) -> dict:
    hits, sums_ok = 0, True
    for _ in range(cfg.hull_trials):
        S, A = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        mdp = random_mdp(S, A, rng, gamma=float(rng.uniform(0.1, 0.95)), with_rewards=False)
        _, occ = enumerate_det_policies(mdp)
        d = occupancy(mdp, rng.dirichlet(np.ones(A), size=S))
        sums_ok &= bool(abs(d.sum() - 1) < 1e-10 and d.min() >= -1e-10 and np.all(np.abs(occ.sum(1) - 1) < 1e-10))
        hits += in_hull(d, occ)
    return {"name": "occupancy_hull", "passed": hits == cfg.hull_trials and sums_ok,
            "trials": cfg.hull_trials, "in_hull": hits, "occupancies_normalized": sums_ok}


def check_policy_improvement(cfg: LabConfig, rng, tol: float, converge_tol: float) -> dict:
    worst_drop, worst_gap, rows_ok = 0.0, 0.0, True
    for i in range(cfg.spi_instances):
        S, A = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        beta = BETAS[i % len(BETAS)]
        mdp = random_mdp(S, A, rng, gamma=float(rng.uniform(0.0, 0.95)))
        pd = rng.dirichlet(np.ones(A), size=S)
        _, js = soft_policy_iteration(mdp, pd, beta, cfg.spi_iterations)
        drop = max([a - b for a, b in zip(js, js[1:])] + [0.0])
        gap = abs(js[-1] - soft_optimal_value(mdp, pd, beta))
        worst_drop, worst_gap = max(worst_drop, drop), max(worst_gap, gap)
        rows_ok &= drop <= tol and gap <= converge_tol
    bandit = TabularMDP(np.ones((1, 2, 1)), [1.0], 0.0, R=[[1.0, 0.0]])
    pd = np.array([[0.5, 0.5]])
    _, js = soft_policy_iteration(bandit, pd, 1.0, 3)
    target = math.log((math.e + 1) / 2)
    bandit_ok = abs(js[-1] - target) <= 1e-6 and abs(soft_optimal_value(bandit, pd, 1.0) - target) <= 1e-6
    return {"name": "policy_improvement", "passed": bool(rows_ok and bandit_ok), "instances": cfg.spi_instances,
            "worst_decrease": worst_drop, "worst_gap_to_soft_optimum": worst_gap,
            "bandit_J": js[-1], "bandit_target": target}


def check_max_entropy(cfg: LabConfig, rng) -> dict:
    """Descriptive curve over A; the pass flag only asserts that the maximizer dominates every vertex."""
    curve, dominates = [], True
    for A in cfg.maxent_A:
        both = 0
        for _ in range(cfg.maxent_instances):
            mdp = random_mdp(3, int(A), rng, gamma=0.9, with_rewards=False)
            res = max_entropy_policy(mdp)
            _, occ = enumerate_det_policies(mdp)
            h_vertex = max(-(o[o > 0] * np.log(o[o > 0])).sum() for o in occ)
            dominates &= bool(res.entropy >= h_vertex - 1e-7)
            both += int((not res.vertex_attains) and abs(res.entropy - math.log(3)) < 1e-6)
        curve.append({"A": int(A), "fraction_nondeterministic_uniform": both / cfg.maxent_instances})
    return {"name": "max_entropy", "passed": dominates, "S": 3, "curve": curve}


def run_lab(cfg: LabConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    checks = [
        check_wendel(cfg, rng, cfg.n_se),
        check_volume(cfg, rng),
        check_bounds(cfg, rng, cfg.n_se),
        check_hull(cfg, rng),
        check_policy_improvement(cfg, rng, cfg.tolerance, cfg.converge_tol),
        check_max_entropy(cfg, rng),
    ]
    return _plain({"seed": seed, "passed": all(c["passed"] for c in checks), "checks": checks})


def _plain(obj):
    """numpy scalars to Python ones so the report is JSON-ready."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
