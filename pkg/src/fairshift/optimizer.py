"""Alternating minimax training against worst-case selection weights.

Each outer round runs full-batch gradient descent on the penalized loss with
the adversarial weights fixed, then hands the weights to an exact linear
program: maximize the weighted loss over a per-variable box subject to the
coupled fairness constraint. The LP has one coupling row, so it is solved by
a parametric Lagrangian scan over breakpoint multipliers instead of a general
solver; a brute-force vertex/facet enumeration oracle is provided for tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .dataset import EncodedDataset
from .model import ModelParams, PenaltyConfig, penalty_slope, penalty_value, sample_losses
from .selection import RatioBounds, unit_bounds

BASELINE_METHODS = ("lr", "fair_lr", "minus_variant")


@dataclass
class InnerLPProblem:
    """Box LP data: maximize scale * l.v subject to lo <= v <= hi and
    |scale * g.v| <= sigma."""

    loss_coeffs: np.ndarray
    fairness_coeffs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sigma: float
    scale: float

    def __post_init__(self):
        self.loss_coeffs = np.asarray(self.loss_coeffs, dtype=np.float64)
        self.fairness_coeffs = np.asarray(self.fairness_coeffs, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        m = self.loss_coeffs.shape[0]
        if m < 1:
            raise ValueError("problem needs at least one variable")
        for arr in (self.fairness_coeffs, self.lo, self.hi):
            if arr.shape != (m,):
                raise ValueError("coefficient vectors must share one length")
        if (self.loss_coeffs < 0).any():
            raise ValueError("loss coefficients must be nonnegative")
        if (self.lo <= 0).any() or (self.lo > self.hi).any():
            raise ValueError("need 0 < lo <= hi elementwise")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


class LPSolution(NamedTuple):
    v: np.ndarray
    objective: float
    status: str  # "optimal" or "infeasible_relaxed"


def build_inner_problem(
    data: EncodedDataset, params: ModelParams, bounds: RatioBounds, sigma: float
) -> InnerLPProblem:
    """Aggregate per-sample losses and fairness terms into LP coefficients.

    Without tied groups there is one LP variable per sample. With tied
    groups, samples in a group share one variable and their coefficients are
    summed, shrinking the LP from sample count to group count.
    """
    n = data.n_samples
    if bounds.n_samples != n:
        raise ValueError("bounds length does not match the dataset")
    losses = sample_losses(params, data)
    a = data.protected.astype(np.float64)
    g = (a - a.mean()) * (data.features @ params.w)
    if bounds.tied_groups is None:
        lo, hi = bounds.lo, bounds.hi
        loss_c, fair_c = losses, g
    else:
        groups = bounds.tied_groups
        m = int(groups.max()) + 1
        loss_c = np.bincount(groups, weights=losses, minlength=m)
        fair_c = np.bincount(groups, weights=g, minlength=m)
        first = np.full(m, -1, dtype=np.intp)
        first[groups[::-1]] = np.arange(n - 1, -1, -1)
        if (first < 0).any():
            raise ValueError("tied group ids must be contiguous in [0, max]")
        lo, hi = bounds.lo[first], bounds.hi[first]
    return InnerLPProblem(
        loss_coeffs=loss_c,
        fairness_coeffs=fair_c,
        lo=lo.copy(),
        hi=hi.copy(),
        sigma=float(sigma),
        scale=1.0 / n,
    )


def _relaxed_point(p: InnerLPProblem, minimize_upper: bool) -> np.ndarray:
    # box point minimizing |g.v| when the slab cannot be reached; ties on
    # g_j == 0 go to whichever bound helps the objective
    d = p.fairness_coeffs
    if minimize_upper:  # g.v too large even at its box minimum
        v = np.where(d > 0, p.lo, p.hi)
    else:
        v = np.where(d > 0, p.hi, p.lo)
    zero = d == 0
    v[zero] = np.where(p.loss_coeffs[zero] > 0, p.hi[zero], p.lo[zero])
    return v


def solve_inner_lp(p: InnerLPProblem) -> LPSolution:
    """Exact maximizer of the box LP with one two-sided coupling row.

    Parametric Lagrangian: for a multiplier lam on the binding side, each
    variable sits at hi when its reduced cost l_j - lam*g_j is positive and
    at lo otherwise; scanning the breakpoints lam = l_j/g_j in order moves
    the coupling value monotonically, and the crossing breakpoint leaves at
    most one fractional coordinate, fixed in closed form on the tight
    constraint. Breakpoint ties are broken by smallest index.
    """
    c, d = p.loss_coeffs, p.fairness_coeffs
    lo, hi = p.lo, p.hi
    t = p.sigma / p.scale  # coupling bound in unscaled units

    dmin = float(np.minimum(d * lo, d * hi).sum())
    dmax = float(np.maximum(d * lo, d * hi).sum())
    if dmin > t:
        v = _relaxed_point(p, minimize_upper=True)
        return LPSolution(v, p.scale * float(c @ v), "infeasible_relaxed")
    if dmax < -t:
        v = _relaxed_point(p, minimize_upper=False)
        return LPSolution(v, p.scale * float(c @ v), "infeasible_relaxed")

    pos = c > 0
    free = ~pos
    base = float((d[pos] * hi[pos]).sum())
    fmin = base + float(np.minimum(d[free] * lo[free], d[free] * hi[free]).sum())
    fmax = base + float(np.maximum(d[free] * lo[free], d[free] * hi[free]).sum())

    if fmin <= t and fmax >= -t:
        # some box-maximal point is feasible: start free coords at lo and
        # nudge them until the coupling value enters the slab
        v = np.where(pos, hi, lo)
        dv = float(d @ v)
        if dv > t:
            for j in np.flatnonzero(free & (d < 0)):
                full = d[j] * (hi[j] - lo[j])
                if dv + full <= t:
                    v[j] = lo[j] + (t - dv) / d[j]
                    dv = t
                    break
                v[j] = hi[j]
                dv += full
        elif dv < -t:
            for j in np.flatnonzero(free & (d > 0)):
                full = d[j] * (hi[j] - lo[j])
                if dv + full >= -t:
                    v[j] = lo[j] + (-t - dv) / d[j]
                    dv = -t
                    break
                v[j] = hi[j]
                dv += full
        return LPSolution(v, p.scale * float(c @ v), "optimal")

    if fmin > t:
        # upper side binds: drive g.v down to exactly t
        v = np.where(pos | (free & (d < 0)), hi, lo)
        dv = float(d @ v)
        events = np.flatnonzero(pos & (d > 0))
        order = events[np.argsort(c[events] / d[events], kind="stable")]
        for j in order:
            drop = d[j] * (hi[j] - lo[j])
            if dv - drop <= t:
                v[j] = hi[j] - (dv - t) / d[j]
                return LPSolution(v, p.scale * float(c @ v), "optimal")
            v[j] = lo[j]
            dv -= drop
        raise AssertionError("breakpoint scan failed to reach a feasible point")

    # lower side binds: drive g.v up to exactly -t
    v = np.where(pos | (free & (d > 0)), hi, lo)
    dv = float(d @ v)
    events = np.flatnonzero(pos & (d < 0))
    order = events[np.argsort(-c[events] / d[events], kind="stable")]
    for j in order:
        rise = -d[j] * (hi[j] - lo[j])
        if dv + rise >= -t:
            v[j] = hi[j] + (-t - dv) / d[j]
            return LPSolution(v, p.scale * float(c @ v), "optimal")
        v[j] = lo[j]
        dv += rise
    raise AssertionError("breakpoint scan failed to reach a feasible point")


def solve_inner_lp_bruteforce(p: InnerLPProblem, tol: float = 1e-9) -> LPSolution:
    """Enumeration oracle for small problems: every box vertex, plus every
    one-fractional-coordinate point on a tight coupling face."""
    m = p.loss_coeffs.shape[0]
    if m > 16:
        raise ValueError("oracle is exponential in M; use M <= 16")
    c, d, lo, hi = p.loss_coeffs, p.fairness_coeffs, p.lo, p.hi
    t = p.sigma / p.scale

    best_v, best_obj = None, -np.inf
    min_abs_v, min_abs = None, np.inf
    for bits in itertools.product((0, 1), repeat=m):
        v = np.where(bits, hi, lo)
        dv = float(d @ v)
        if abs(dv) <= min_abs:
            min_abs, min_abs_v = abs(dv), v.copy()
        candidates = [v] if abs(dv) <= t + tol else []
        for j in range(m):
            if d[j] == 0:
                continue
            rest = dv - d[j] * v[j]
            for target in (t, -t):
                vj = (target - rest) / d[j]
                if lo[j] - tol <= vj <= hi[j] + tol:
                    cand = v.copy()
                    cand[j] = min(max(vj, lo[j]), hi[j])
                    if abs(d @ cand) <= t + tol:
                        candidates.append(cand)
        for cand in candidates:
            obj = float(c @ cand)
            if obj > best_obj:
                best_obj, best_v = obj, cand.copy()
    if best_v is None:
        return LPSolution(min_abs_v, p.scale * float(c @ min_abs_v), "infeasible_relaxed")
    return LPSolution(best_v, p.scale * best_obj, "optimal")


def expand_group_weights(v_star: np.ndarray, tied_groups) -> np.ndarray:
    """Broadcast per-group LP variables back to per-sample weights."""
    if tied_groups is None:
        return np.asarray(v_star, dtype=np.float64).copy()
    return np.asarray(v_star, dtype=np.float64)[np.asarray(tied_groups)]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule; all values are engineering defaults."""

    learning_rate: float = 0.1
    inner_gd_steps: int = 200
    outer_rounds: int = 20
    tolerance: float = 1e-6
    seed: int = 0
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.inner_gd_steps < 1 or self.outer_rounds < 1:
            raise ValueError("step counts must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class RoundRecord:
    """One alternation round: objective after the adversary's move."""

    round: int
    objective: float
    covariance: float
    lp_status: str
    objective_before_lp: float


@dataclass
class TrainResult:
    params: ModelParams
    weights: np.ndarray
    history: list
    converged: bool


def _objective_and_grad(w, X, y, a_cent, v_loss, v_fair, cfg: PenaltyConfig):
    n = X.shape[0]
    z = X @ w
    losses = np.logaddexp(0.0, z) - y * z
    loss = float(v_loss @ losses) / n
    c = float((a_cent * v_fair) @ z) / n
    obj = loss + penalty_value(c, cfg)
    coeff = v_loss * (expit(z) - y) + penalty_slope(c, cfg) * a_cent * v_fair
    grad = X.T @ coeff / n
    return obj, grad, c


def _objective(w, X, y, a_cent, v_loss, v_fair, cfg: PenaltyConfig):
    n = X.shape[0]
    z = X @ w
    loss = float(v_loss @ (np.logaddexp(0.0, z) - y * z)) / n
    c = float((a_cent * v_fair) @ z) / n
    return loss + penalty_value(c, cfg), c


def _fit_loop(
    data: EncodedDataset,
    bounds: RatioBounds,
    cfg: TrainConfig,
    weighted_fairness: bool,
) -> TrainResult:
    n = data.n_samples
    if bounds.n_samples != n:
        raise ValueError("bounds length does not match the dataset")
    X = data.features
    y = data.labels.astype(np.float64)
    a = data.protected.astype(np.float64)
    a_cent = a - a.mean()
    ones = np.ones(n)

    w = np.zeros(data.n_features)
    v = bounds.nominal.copy()
    v_fair = v if weighted_fairness else ones
    history = []
    prev_obj = None
    converged = False

    for rnd in range(cfg.outer_rounds):
        for step in range(cfg.inner_gd_steps):
            obj, grad, _ = _objective_and_grad(w, X, y, a_cent, v, v_fair, cfg.penalty)
            if not np.isfinite(obj):
                raise RuntimeError(
                    f"objective diverged at round {rnd}, step {step} "
                    f"(learning_rate={cfg.learning_rate}); lower the learning rate"
                )
            w = w - cfg.learning_rate * grad
        params = ModelParams(w)
        obj_before_lp, _ = _objective(w, X, y, a_cent, v, v_fair, cfg.penalty)

        problem = build_inner_problem(data, params, bounds, cfg.penalty.sigma)
        if not weighted_fairness:
            problem = replace(
                problem, fairness_coeffs=np.zeros_like(problem.fairness_coeffs)
            )
        sol = solve_inner_lp(problem)
        v = expand_group_weights(sol.v, bounds.tied_groups)
        v_fair = v if weighted_fairness else ones

        obj, cov = _objective(w, X, y, a_cent, v, v_fair, cfg.penalty)
        if not np.isfinite(obj):
            raise RuntimeError(
                f"objective diverged after the adversary step in round {rnd}"
            )
        history.append(RoundRecord(rnd, obj, cov, sol.status, obj_before_lp))
        if prev_obj is not None and abs(obj - prev_obj) < cfg.tolerance:
            converged = True
            break
        prev_obj = obj

    return TrainResult(params=ModelParams(w), weights=v, history=history, converged=converged)


def fit(data: EncodedDataset, bounds: RatioBounds, cfg: TrainConfig) -> TrainResult:
    """Robust fit: alternate descent on the penalized loss with the exact
    worst-case weight LP, starting from w = 0 and the nominal weights."""
    return _fit_loop(data, bounds, cfg, weighted_fairness=True)


def fit_baseline(
    data: EncodedDataset,
    method: str,
    bounds: RatioBounds = None,
    cfg: TrainConfig = None,
) -> TrainResult:
    """Reference methods sharing the same loop.

    lr: unit weights, no fairness penalty. fair_lr: unit weights, penalty
    on. minus_variant: robust loss, but the fairness term (penalty and LP
    coupling) uses unit weights.
    """
    if cfg is None:
        cfg = TrainConfig()
    if method == "lr":
        plain = replace(cfg, penalty=replace(cfg.penalty, beta=0.0))
        return _fit_loop(data, unit_bounds(data.n_samples), plain, True)
    if method == "fair_lr":
        return _fit_loop(data, unit_bounds(data.n_samples), cfg, True)
    if method == "minus_variant":
        if bounds is None:
            raise ValueError("minus_variant requires ratio bounds")
        return _fit_loop(data, bounds, cfg, weighted_fairness=False)
    raise ValueError(f"unknown baseline {method!r}; expected one of {BASELINE_METHODS}")
