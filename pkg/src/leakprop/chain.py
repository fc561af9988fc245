"""Exact analysis of the reflecting random walk on the non-negative integers.

From state 0 the walk always moves to 1; from s > 0 it moves up with
probability p and down with probability q = 1 - p. All rewards are zero, so
the true value function is identically zero, and the approximating class pins
v(0) = alpha. For numerics the chain is truncated at N states; the last state
moves down with probability q and stays put with probability p, which keeps
the geometric stationary weights exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ChainModel:
    p: float
    gamma: float
    alpha: float = 1.0
    n_states: int = 200

    def __post_init__(self):
        if not 0.0 < self.p < 0.5:
            raise ValueError(
                f"p={self.p} must lie in (0, 0.5); for p >= 0.5 the walk drifts "
                "to infinity and has no stationary distribution")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma={self.gamma} must lie in [0, 1)")
        if self.alpha < 0.0:
            raise ValueError(f"alpha={self.alpha} must be non-negative")
        if self.n_states < 3:
            raise ValueError("n_states must be >= 3")

    @property
    def q(self) -> float:
        return 1.0 - self.p


class Stationary(NamedTuple):
    mu: np.ndarray
    tail_mass: float


class CharRoots(NamedTuple):
    r1: float
    r2: float


@dataclass(frozen=True)
class ProjectionSpec:
    """Affine class a + W with a = value at ``constrained_index``, W = {v : v[i] = 0}."""

    constrained_index: int = 0
    constrained_value: float = 1.0

    def project(self, v):
        """Orthogonal projection onto a + W."""
        out = np.array(v, dtype=np.float64)
        out[self.constrained_index] = self.constrained_value
        return out

    def project0(self, v):
        """Orthogonal projection onto W."""
        out = np.array(v, dtype=np.float64)
        out[self.constrained_index] = 0.0
        return out


def stationary_distribution(model: ChainModel) -> Stationary:
    """Stationary probabilities, normalized over the infinite chain.

    Weights are q, 1, p/q, (p/q)^2, ... with total q + 1/(1 - p/q).
    ``tail_mass`` is the probability of states >= N, which the truncated
    vector omits.
    """
    p, q, n = model.p, model.q, model.n_states
    ratio = p / q
    total = q + 1.0 / (1.0 - ratio)
    w = np.empty(n)
    w[0] = q
    w[1:] = ratio ** np.arange(n - 1)
    tail = ratio ** (n - 1) / (1.0 - ratio) / total
    return Stationary(w / total, tail)


def transition_matrix(model: ChainModel) -> np.ndarray:
    n, p, q = model.n_states, model.p, model.q
    P = np.zeros((n, n))
    P[0, 1] = 1.0
    s = np.arange(1, n - 1)
    P[s, s + 1] = p
    P[s, s - 1] = q
    P[n - 1, n - 2] = q
    P[n - 1, n - 1] = p
    return P


def characteristic_roots(model: ChainModel) -> CharRoots:
    """Roots of r^2 - r/(p*gamma) + q/p = 0, smaller first.

    r1 is evaluated in the rationalized form 2*q*gamma / (1 + sqrt(disc)) so it
    stays accurate as gamma -> 0.
    """
    p, q, g = model.p, model.q, model.gamma
    sq = math.sqrt(1.0 - 4.0 * p * q * g * g)
    r1 = 2.0 * q * g / (1.0 + sq)
    r2 = (1.0 + sq) / (2.0 * p * g) if g > 0 else math.inf
    return CharRoots(r1, r2)


def char_residual(model: ChainModel, r: float) -> float:
    return r * r - r / (model.p * model.gamma) + model.q / model.p


def analytic_td_solution(model: ChainModel) -> np.ndarray:
    """TD fixed point alpha * r1**s of the untruncated chain."""
    r1 = characteristic_roots(model).r1
    s = np.arange(model.n_states)
    out = model.alpha * np.power(r1, s)
    out[0] = model.alpha
    return out


def td_operator(model: ChainModel, v) -> np.ndarray:
    """Expected one-step TD(0) backup: gamma * E[v(S') | S = s]."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    out[0] = v[1]
    out[1:-1] = model.p * v[2:] + model.q * v[:-2]
    out[-1] = model.p * v[-1] + model.q * v[-2]
    return model.gamma * out


def td_residual(model: ChainModel, v) -> np.ndarray:
    """v - T v at s > 0 (zero at s = 0); vanishes exactly at a TD fixed point."""
    v = np.asarray(v, dtype=np.float64)
    res = v - td_operator(model, v)
    res[0] = 0.0
    return res


def expected_td_sweep(model: ChainModel, v, lr: float = 1.0) -> np.ndarray:
    """Synchronous expected TD update of every state s > 0; v[0] stays pinned."""
    if not 0.0 < lr <= 1.0:
        raise ValueError("lr must lie in (0, 1]")
    v = np.asarray(v, dtype=np.float64)
    out = (1.0 - lr) * v + lr * td_operator(model, v)
    out[0] = v[0]
    return out


def td_fixed_point_numeric(model: ChainModel, tol: float = 1e-10, max_sweeps: int = 1_000_000,
                           lr: float = 1.0) -> np.ndarray:
    """Iterate expected TD sweeps from (alpha, 0, 0, ...) to convergence.

    Stops once the largest per-state change is below ``tol`` and the
    geometric-tail estimate of the remaining error, change * rho / (1 - rho)
    with rho the observed contraction ratio, is below ``tol`` as well.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(model.n_states)
    v[0] = model.alpha
    prev_change = math.inf
    change = math.inf
    for _ in range(max_sweeps):
        nxt = expected_td_sweep(model, v, lr)
        change = float(np.max(np.abs(nxt - v)))
        v = nxt
        if change == 0.0:
            return v
        rho = change / prev_change
        prev_change = change
        if change < tol and rho < 1.0 and change * rho / (1.0 - rho) < tol:
            return v
    raise ConvergenceError(f"no convergence within {max_sweeps} sweeps", change)


def mu_norm_sq(model: ChainModel, e) -> float:
    mu = stationary_distribution(model).mu
    e = np.asarray(e, dtype=np.float64)
    return float(np.sum(mu * e * e))


def dirichlet_norm_sq(model: ChainModel, e) -> float:
    """Half the stationary-weighted sum over transitions of squared increments."""
    mu = stationary_distribution(model).mu
    e = np.asarray(e, dtype=np.float64)
    P = transition_matrix(model)
    diff = e[None, :] - e[:, None]
    return float(0.5 * np.sum(mu[:, None] * P * diff * diff))


def mixed_loss(model: ChainModel, e) -> float:
    g = model.gamma
    return g * dirichlet_norm_sq(model, e) + (1.0 - g) * mu_norm_sq(model, e)


def mixed_loss_gradient(model: ChainModel, e, free_only: bool = True) -> np.ndarray:
    """Exact gradient of ``mixed_loss``; component 0 is zeroed when ``free_only``."""
    mu = stationary_distribution(model).mu
    e = np.asarray(e, dtype=np.float64)
    A = mu[:, None] * transition_matrix(model)
    S = A + A.T
    grad = model.gamma * (e * S.sum(axis=0) - S @ e) + (1.0 - model.gamma) * 2.0 * mu * e
    if free_only:
        grad[0] = 0.0
    return grad


@dataclass(frozen=True)
class TsitsiklisReport:
    error_norm: float           # |v~ - v*|_mu
    best_error_norm: float      # |Pi v* - v*|_mu
    sharp_bound: float          # best / sqrt(1 - gamma^2)
    loose_bound: float          # best / (1 - gamma)
    sharp_holds: bool
    loose_holds: bool

    @property
    def ratio(self) -> float:
        return self.error_norm / self.best_error_norm

    @property
    def sharp_factor(self) -> float:
        return self.sharp_bound / self.best_error_norm

    @property
    def loose_factor(self) -> float:
        return self.loose_bound / self.best_error_norm


def tsitsiklis_check(model: ChainModel, v_tilde, v_star=None,
                     spec: ProjectionSpec | None = None) -> TsitsiklisReport:
    if spec is None:
        spec = ProjectionSpec(0, model.alpha)
    v_star = np.zeros(model.n_states) if v_star is None else np.asarray(v_star, dtype=np.float64)
    err = math.sqrt(mu_norm_sq(model, np.asarray(v_tilde) - v_star))
    best = math.sqrt(mu_norm_sq(model, spec.project(v_star) - v_star))
    g = model.gamma
    sharp = best / math.sqrt(1.0 - g * g)
    loose = best / (1.0 - g)
    return TsitsiklisReport(err, best, sharp, loose, err <= sharp, err <= loose)


def no_leakage_estimate(model: ChainModel) -> np.ndarray:
    """The estimate (alpha, 0, 0, ...), fixed point of Pi T' with T' v = gamma v."""
    v = np.zeros(model.n_states)
    v[0] = model.alpha
    return v


def analysis_table(model: ChainModel, tol: float = 1e-10):
    """Rows (s, mu(s), analytic v(s), numeric v(s)) for the CLI."""
    mu = stationary_distribution(model).mu
    va = analytic_td_solution(model)
    vn = td_fixed_point_numeric(model, tol=tol)
    return [(s, mu[s], va[s], vn[s]) for s in range(model.n_states)]


def analysis_report(model: ChainModel, tol: float = 1e-10) -> str:
    st = stationary_distribution(model)
    roots = characteristic_roots(model)
    va = analytic_td_solution(model)
    vn = td_fixed_point_numeric(model, tol=tol)
    mask = st.mu > 1e-12
    rep = tsitsiklis_check(model, va)
    rep0 = tsitsiklis_check(model, no_leakage_estimate(model))
    grad = mixed_loss_gradient(model, va)
    lines = [
        f"p={model.p!r} q={model.q!r} gamma={model.gamma!r} alpha={model.alpha!r} N={model.n_states}",
        f"tail_mass={st.tail_mass:.6e}",
        f"r1={roots.r1:.12g}",
        f"r2={roots.r2:.12g}",
        f"r1*r2={roots.r1 * roots.r2:.12g} q/p={model.q / model.p:.12g}",
        f"max_abs_numeric_minus_analytic={np.max(np.abs(vn - va)[mask]):.3e}",
        f"dirichlet_norm_sq={dirichlet_norm_sq(model, va):.12g}",
        f"mu_norm_sq={mu_norm_sq(model, va):.12g}",
        f"mixed_loss={mixed_loss(model, va):.12g}",
        f"mixed_loss_grad_max={np.max(np.abs(grad)):.3e}",
        f"error_norm={rep.error_norm:.12g}",
        f"best_error_norm={rep.best_error_norm:.12g}",
        f"sharp_bound={rep.sharp_bound:.12g} holds={rep.sharp_holds}",
        f"loose_bound={rep.loose_bound:.12g} holds={rep.loose_holds}",
        f"bound_factors loose={1.0 / (1.0 - model.gamma):.6g} sharp={1.0 / math.sqrt(1.0 - model.gamma**2):.6g}",
        f"no_leakage_ratio={rep0.ratio:.15g}",
    ]
    return "\n".join(lines) + "\n"
