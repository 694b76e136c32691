"""Exact tabular MDP tools: occupancy measures, the occupancy polytope, simplex geometry,
hull-coverage probabilities and KL-regularized (soft) policy iteration.

Policies are (S, A) row-stochastic arrays; transition kernels are (S, A, S).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import DidNotConverge, NumericalOverflow, PreconditionUnmet, SingularSystem, TooLarge

MAX_POLICIES = 10**6


@dataclass(frozen=True)
class TabularMDP:
    P: np.ndarray
    rho0: np.ndarray
    gamma: float
    R: Optional[np.ndarray] = None  # (S, A) rewards; only needed for value computations

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("rows of P must be probability vectors")
        rho0 = np.asarray(self.rho0, dtype=float)
        if rho0.shape != (P.shape[0],) or np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > 1e-12:
            raise ValueError("rho0 must be a probability vector over states")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "rho0", rho0)
        if self.R is not None:
            object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(P.shape[:2]))

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]


def random_mdp(S: int, A: int, rng: np.random.Generator, gamma: float = 0.9, with_rewards: bool = True) -> TabularMDP:
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    rho0 = rng.dirichlet(np.ones(S))
    rho0 /= rho0.sum()
    R = rng.uniform(0.0, 1.0, (S, A)) if with_rewards else None
    return TabularMDP(P, rho0, gamma, R)


def state_transition(mdp: TabularMDP, pi) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", np.asarray(pi, dtype=float), mdp.P)


def occupancy(mdp: TabularMDP, pi) -> np.ndarray:
    """Discounted state distribution d = (1-gamma) (I - gamma P_pi^T)^{-1} rho0."""
    if not 0.0 <= mdp.gamma < 1.0:
        raise SingularSystem(f"gamma must lie in [0, 1), got {mdp.gamma}")
    A = np.eye(mdp.S) - mdp.gamma * state_transition(mdp, pi).T
    try:
        return np.linalg.solve(A, (1.0 - mdp.gamma) * mdp.rho0)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def deterministic_policy(actions, A: int) -> np.ndarray:
    return np.eye(A)[np.asarray(actions)]


def enumerate_det_policies(mdp: TabularMDP, limit: int = MAX_POLICIES) -> tuple[np.ndarray, np.ndarray]:
    """All A^S deterministic policies (as action tuples) and their occupancies, shape (M, S)."""
    M = mdp.A**mdp.S
    if M > limit:
        raise TooLarge(f"A^S = {M} deterministic policies exceeds the limit {limit}")
    acts = np.array(list(itertools.product(range(mdp.A), repeat=mdp.S)), dtype=int).reshape(M, mdp.S)
    occ = np.stack([occupancy(mdp, deterministic_policy(a, mdp.A)) for a in acts])
    return acts, occ


def in_hull(point, vertices) -> bool:
    """LP feasibility: is ``point`` a convex combination of the rows of ``vertices``?"""
    V = np.asarray(vertices, dtype=float)
    m = V.shape[0]
    A_eq = np.vstack([V.T, np.ones((1, m))])
    b_eq = np.append(np.asarray(point, dtype=float), 1.0)
    res = linprog(np.zeros(m), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def simplex_volume(S: int) -> float:
    """(S-1)-volume of the probability simplex in R^S: sqrt(S) / (S-1)!."""
    if S < 2:
        raise ValueError("S must be >= 2")
    return math.sqrt(S) / math.factorial(S - 1)


def hyperplane_basis(S: int) -> np.ndarray:
    """Orthonormal (S, S-1) basis of {x : sum x = 0}."""
    q, _ = np.linalg.qr(np.eye(S) - 1.0 / S)
    return q[:, : S - 1]


def simplex_volume_mc(S: int, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Hit-or-miss estimate of the simplex volume inside its own hyperplane; returns (volume, SE)."""
    B = hyperplane_basis(S)
    O = np.full(S, 1.0 / S)
    verts = (np.eye(S) - O) @ B  # simplex vertices in hyperplane coordinates
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    box = float(np.prod(hi - lo))
    y = rng.uniform(lo, hi, size=(n, S - 1))
    hit = np.all(O + y @ B.T >= 0.0, axis=1)
    p = hit.mean()
    return box * p, box * math.sqrt(p * (1 - p) / n)


def _center_in_hull_2d(pts: np.ndarray) -> np.ndarray:
    """Batch test for S=3: the center lies in the hull iff no angular gap of the points around it exceeds pi."""
    B = hyperplane_basis(3)
    y = (pts - 1.0 / 3.0) @ B  # (trials, M, 2)
    ang = np.sort(np.arctan2(y[..., 1], y[..., 0]), axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = 2 * np.pi - (ang[:, -1] - ang[:, 0])
    return np.maximum(gaps.max(axis=1, initial=0.0), wrap) < np.pi


def wendel_mc(S: int, M: int, n_trials: int, rng: np.random.Generator, method: str = "auto") -> tuple[float, float]:
    """Fraction of trials in which the simplex center lies in the hull of M uniform simplex points, with its SE."""
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000")
    if M < S:
        return 0.0, 0.0
    pts = rng.dirichlet(np.ones(S), size=(n_trials, M))
    if method == "auto":
        method = "interval" if S == 2 else "angle" if S == 3 else "lp"
    if method == "interval":
        x = pts[..., 0]
        hits = (x.min(axis=1) <= 0.5) & (x.max(axis=1) >= 0.5)
    elif method == "angle":
        hits = _center_in_hull_2d(pts)
    else:
        O = np.full(S, 1.0 / S)
        hits = np.array([in_hull(O, p) for p in pts])
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / n_trials)


def wendel_exact_1d(M: int) -> float:
    return 1.0 - 2.0 ** (1 - M)


@dataclass(frozen=True)
class BoundReport:
    S: int
    M: int
    u: float
    v: float
    bound: float
    precondition: bool
    estimate: float
    se: float

    @property
    def holds(self) -> bool:
        return (not self.precondition) or self.estimate >= self.bound - 3 * self.se


def coverage_bound(S: int, M: int) -> tuple[float, float, float, bool]:
    """(u, v, 1 - M^S v^M, precondition) with u = 1 for S=2 and the conservative 1/(S-1)^S otherwise."""
    u = 1.0 if S == 2 else 1.0 / (S - 1) ** S
    v = 1.0 - u / 2.0
    bound = 1.0 - math.exp(S * math.log(M) + M * math.log(v))
    pre = M >= S - 2 + (S - 1) * (2.0 - u) / u
    return u, v, bound, pre


def bound_check(S: int, M: int, n_trials: int, rng: np.random.Generator, strict: bool = False) -> BoundReport:
    """Monte Carlo P(center in hull) next to the lower bound; ``strict`` raises when the precondition fails."""
    u, v, bound, pre = coverage_bound(S, M)
    if strict and not pre:
        raise PreconditionUnmet(f"M={M} is below the bound's precondition for S={S}")
    est, se = wendel_mc(S, M, n_trials, rng)
    return BoundReport(S, M, u, v, bound, pre, est, se)


def entropy(d) -> float:
    d = np.asarray(d, dtype=float)
    nz = d > 0
    return float(-(d[nz] * np.log(d[nz])).sum())


@dataclass(frozen=True)
class MaxEntResult:
    pi: np.ndarray
    d: np.ndarray
    entropy: float
    is_deterministic: bool  # recovered policy is within 1e-6 of deterministic
    vertex_attains: bool    # some deterministic policy reaches the same maximal entropy


def max_entropy_policy(mdp: TabularMDP, tol: float = 1e-6) -> MaxEntResult:
    """Maximize H(d) over state-action occupancy flows, then read off pi(a|s) = mu(s,a)/d(s)."""
    import cvxpy as cp

    S, A = mdp.S, mdp.A
    if S * A > 100:
        raise TooLarge("max_entropy_policy needs S*A <= 100")
    mu = cp.Variable((S, A), nonneg=True)
    d = cp.sum(mu, axis=1)
    inflow = (1 - mdp.gamma) * mdp.rho0 + mdp.gamma * sum(mdp.P[:, a, :].T @ mu[:, a] for a in range(A))
    prob = cp.Problem(cp.Maximize(cp.sum(cp.entr(d))), [d == inflow])
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.SolverError as exc:
        raise DidNotConverge(str(exc)) from exc
    if prob.status != cp.OPTIMAL:
        raise DidNotConverge(f"solver status {prob.status}")
    m = np.maximum(mu.value, 0.0)
    ds = m.sum(axis=1)
    pi = np.where(ds[:, None] > 1e-12, m / np.maximum(ds, 1e-300)[:, None], 1.0 / A)
    pi /= pi.sum(axis=1, keepdims=True)
    d_pi = occupancy(mdp, pi)
    h = entropy(d_pi)
    det = bool(np.all(pi.max(axis=1) >= 1 - tol))
    vertex = False
    if A**S <= MAX_POLICIES:
        _, occ = enumerate_det_policies(mdp)
        vertex = max(entropy(o) for o in occ) >= h - tol
    return MaxEntResult(pi, d_pi, h, det, vertex)


# KL-regularized policy iteration

def _check_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be > 0")


def soft_values(mdp: TabularMDP, pi, pi_d, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact (V, Q) of ``pi`` for rewards R - beta log(pi/pi_d): V = (I - gamma P_pi)^{-1} r_pi, Q = R + gamma P V."""
    _check_beta(beta)
    pi, pi_d = np.asarray(pi, dtype=float), np.asarray(pi_d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(pi > 0, pi * (np.log(pi) - np.log(pi_d)), 0.0)
    r_pi = (pi * mdp.R).sum(axis=1) - beta * kl.sum(axis=1)
    try:
        V = np.linalg.solve(np.eye(mdp.S) - mdp.gamma * state_transition(mdp, pi), r_pi)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    Q = mdp.R + mdp.gamma * mdp.P @ V
    return V, Q


def j_f(mdp: TabularMDP, pi, pi_d, beta: float) -> float:
    """Regularized objective E_{s0 ~ rho0}[V_pi(s0)]."""
    return float(mdp.rho0 @ soft_values(mdp, pi, pi_d, beta)[0])


def tilt(pi_d, Q, beta: float) -> np.ndarray:
    """pi ∝ pi_d exp(Q / beta), normalized in log space."""
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(pi_d, dtype=float)) + np.asarray(Q, dtype=float) / beta
    out = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    if not np.all(np.isfinite(out)):
        raise NumericalOverflow("exponential tilt produced non-finite probabilities")
    return out


def soft_policy_step_exact(mdp: TabularMDP, pi_d, pi_prev, beta: float) -> np.ndarray:
    """One exact improvement step: evaluate Q of ``pi_prev`` then tilt ``pi_d`` by exp(Q / beta)."""
    _, Q = soft_values(mdp, pi_prev, pi_d, beta)
    return tilt(pi_d, Q, beta)


def soft_optimal_value(mdp: TabularMDP, pi_d, beta: float, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """rho0 . V* where V* = beta log sum_a pi_d exp((R + gamma P V*)/beta), by value iteration."""
    _check_beta(beta)
    V = np.zeros(mdp.S)
    with np.errstate(divide="ignore"):
        log_pd = np.log(np.asarray(pi_d, dtype=float))
    for _ in range(max_iter):
        Q = mdp.R + mdp.gamma * mdp.P @ V
        V_new = beta * logsumexp(log_pd + Q / beta, axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            return float(mdp.rho0 @ V_new)
        V = V_new
    raise DidNotConverge("soft value iteration did not converge")


def soft_policy_iteration(mdp: TabularMDP, pi_d, beta: float, n_iter: int, pi0=None) -> tuple[list, list]:
    """Policies pi_0..pi_n and their J_f values, starting from pi_0 = pi_d unless given."""
    pi = np.asarray(pi_d if pi0 is None else pi0, dtype=float)
    pis, js = [pi], [j_f(mdp, pi, pi_d, beta)]
    for _ in range(n_iter):
        pi = soft_policy_step_exact(mdp, pi_d, pi, beta)
        pis.append(pi)
        js.append(j_f(mdp, pi, pi_d, beta))
    return pis, js
