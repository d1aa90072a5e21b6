"""Decision-rule estimators: OLS, ridge, LASSO, and the strategy-robust
nonlinear least-squares fit that anticipates agents' best responses.

Objective conventions. All penalized fits minimize

    (1/2N) * sum of squared residuals  +  penalty(beta)

with penalty = lam * sum_k |beta_k * sigma_k| for LASSO and
(lam/2) * sum_k (beta_k * sigma_k)^2 for ridge, sigma_k the feature standard
deviation. Penalties are therefore scale-free while counterfactual terms stay
in raw behavior units. The strategy-robust objective replaces the residual
with the counterfactual one, y - b0 - beta @ (bliss + gamma(v) inv_cost beta),
averaged over the empirical gaming-shock set, and adds
(welfare_weight/2) * mean manipulation cost when requested. Intercepts are
never penalized. The null LASSO threshold under this convention is
max_k |<x_k, y - ybar>| / N on standardized features.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    InvalidInputError,
    SingularDesignError,
    UnreachableSupportError,
)
from .model import CostModel, DecisionRule, Population

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-8
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.gradient_tolerance <= 0:
            raise InvalidInputError("gradient_tolerance must be positive")
        if self.restarts < 1:
            raise InvalidInputError("restarts must be at least 1")


@dataclass(frozen=True)
class FitConfig:
    penalty_kind: str = "none"  # none | lasso | ridge
    lam: float = 0.0
    welfare_weight: float = 0.0
    support_limit: int | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.penalty_kind not in ("none", "lasso", "ridge"):
            raise InvalidInputError(f"unknown penalty_kind {self.penalty_kind!r}")
        if self.lam < 0:
            raise InvalidInputError("lam must be nonnegative")
        if self.welfare_weight < 0:
            raise InvalidInputError("welfare_weight must be nonnegative")
        if self.support_limit is not None and self.support_limit < 1:
            raise InvalidInputError("support_limit must be at least 1 when present")


@dataclass(frozen=True)
class FitReport:
    """Result of one fit.

    ``in_sample_loss`` is the unpenalized mean squared error at the behavior
    the estimator assumes (bliss for the naive fits, model-predicted best
    response for the strategy-robust one). ``objective_value`` is the full
    internal objective (half-MSE convention, penalty and welfare included).
    """

    rule: DecisionRule
    in_sample_loss: float
    converged: bool
    iterations_used: int
    objective_value: float
    config: FitConfig | None = None


# ------------------------------------------------------------------ plumbing

def _design(pop: Population) -> tuple[np.ndarray, np.ndarray]:
    x = np.column_stack([np.ones(pop.n_agents), pop.bliss])
    return x, pop.outcomes


def _check_rank(x: np.ndarray, names: list[str]) -> None:
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    ref = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > _RANK_TOL * ref * max(x.shape)))
    if rank < x.shape[1]:
        bad = tuple(names[j] for j in sorted(piv[rank:]))
        raise SingularDesignError(
            f"design matrix is rank deficient; offending columns: {', '.join(bad)}",
            columns=bad,
        )


def _standardize(pop: Population) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    x = pop.bliss
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    if np.any(sigma == 0):
        bad = tuple(pop.feature_names[j] for j in np.nonzero(sigma == 0)[0])
        raise SingularDesignError(
            f"constant feature columns cannot be standardized: {', '.join(bad)}",
            columns=bad,
        )
    ybar = float(pop.outcomes.mean())
    return (x - mu) / sigma, mu, sigma, pop.outcomes - ybar, ybar


def lasso_null_lambda(pop: Population) -> float:
    """Smallest penalty at which the LASSO keeps no features."""
    xs, _, _, yc, _ = _standardize(pop)
    return float(np.max(np.abs(xs.T @ yc)) / pop.n_agents)


# ----------------------------------------------------------------- naive fits

def fit_ols(pop: Population) -> FitReport:
    """Exact least squares of the outcome on (1, bliss)."""
    x, y = _design(pop)
    n, kp1 = x.shape
    if n <= kp1:
        raise InvalidInputError(f"need more than {kp1} agents to fit {kp1} parameters")
    _check_rank(x, ["intercept"] + list(pop.feature_names))
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    mse = float(np.mean(resid * resid))
    rule = DecisionRule(coef[0], coef[1:], label="ols")
    return FitReport(rule, mse, True, 0, 0.5 * mse, FitConfig())


def fit_ridge(pop: Population, lam: float) -> FitReport:
    """Closed-form ridge fit; the intercept is unpenalized."""
    if lam < 0:
        raise InvalidInputError("lam must be nonnegative")
    if lam == 0.0:
        rep = fit_ols(pop)
        return replace(rep, rule=replace(rep.rule, label="ridge"),
                       config=FitConfig(penalty_kind="ridge", lam=0.0))
    xs, mu, sigma, yc, ybar = _standardize(pop)
    n, k = xs.shape
    gram = xs.T @ xs / n + lam * np.eye(k)
    beta_s = np.linalg.solve(gram, xs.T @ yc / n)
    beta = beta_s / sigma
    b0 = ybar - float(beta @ mu)
    rule = DecisionRule(b0, beta, label="ridge")
    resid = pop.outcomes - b0 - pop.bliss @ beta
    mse = float(np.mean(resid * resid))
    obj = 0.5 * mse + 0.5 * lam * float(beta_s @ beta_s)
    return FitReport(rule, mse, True, 0, obj, FitConfig(penalty_kind="ridge", lam=lam))


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _lasso_cd(xs: np.ndarray, yc: np.ndarray, lam: float, tol: float,
              max_iter: int) -> tuple[np.ndarray, int, bool]:
    """Cyclic coordinate descent on standardized data (unit column variance)."""
    n, k = xs.shape
    beta = np.zeros(k)
    r = yc.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_step = 0.0
        for j in range(k):
            bj = beta[j]
            rho = float(xs[:, j] @ r) / n + bj
            new = _soft(rho, lam)
            if new != bj:
                r -= xs[:, j] * (new - bj)
                beta[j] = new
                max_step = max(max_step, abs(new - bj))
        if max_step <= tol:
            g = xs.T @ r / n
            active = beta != 0
            kkt = max(
                float(np.max(np.abs(g[active] - lam * np.sign(beta[active])), initial=0.0)),
                float(np.max(np.abs(g[~active]), initial=0.0) - lam),
            )
            if kkt <= 10 * tol:
                converged = True
                break
    return beta, it, converged


def fit_lasso(pop: Population, lam: float, optimizer: OptimizerConfig | None = None) -> FitReport:
    """Coordinate-descent LASSO on internally standardized features.

    Coefficients are reported on the original scale and the intercept is
    unpenalized. Raises ConvergenceError (carrying the last iterate) if the
    KKT conditions are not met within max_iterations sweeps.
    """
    if lam < 0:
        raise InvalidInputError("lam must be nonnegative")
    opt = optimizer or OptimizerConfig()
    xs, mu, sigma, yc, ybar = _standardize(pop)
    beta_s, iters, converged = _lasso_cd(xs, yc, lam, opt.gradient_tolerance, opt.max_iterations)
    beta = beta_s / sigma
    b0 = ybar - float(beta @ mu)
    rule = DecisionRule(b0, beta, label="lasso")
    resid = pop.outcomes - b0 - pop.bliss @ beta
    mse = float(np.mean(resid * resid))
    obj = 0.5 * mse + lam * float(np.sum(np.abs(beta_s)))
    report = FitReport(rule, mse, converged, iters, obj,
                       FitConfig(penalty_kind="lasso", lam=lam, optimizer=opt))
    if not converged:
        raise ConvergenceError(
            f"lasso coordinate descent did not meet KKT tolerance in {opt.max_iterations} sweeps",
            best=report,
        )
    return report


def _lasso_active_size(xs, yc, lam, opt) -> int:
    beta_s, _, _ = _lasso_cd(xs, yc, lam, opt.gradient_tolerance, opt.max_iterations)
    return int(np.count_nonzero(beta_s))


def lasso_support_lambda(pop: Population, target_support: int,
                         optimizer: OptimizerConfig | None = None,
                         n_path: int = 100, rel_tol: float = 1e-4) -> float:
    """Smallest penalty whose LASSO active set has the requested size.

    Scans a 100-point logarithmic path down from the null threshold, then
    bisects the boundary to 1e-4 relative. Raises UnreachableSupportError when
    no penalty on the refined path produces exactly the requested size (the
    active set can jump past it when features enter in groups).
    """
    k = pop.n_features
    if not (1 <= target_support <= k):
        raise InvalidInputError(f"target_support must be in [1, {k}]")
    opt = optimizer or OptimizerConfig()
    xs, _, _, yc, _ = _standardize(pop)
    lam_max = float(np.max(np.abs(xs.T @ yc)) / pop.n_agents)
    if lam_max == 0.0:
        raise UnreachableSupportError("outcome is orthogonal to every feature; no path exists")
    path = lam_max * np.logspace(0, -4, n_path)
    sizes = [_lasso_active_size(xs, yc, lam, opt) for lam in path]
    over = next((i for i, s in enumerate(sizes) if s > target_support), None)
    if over is None:
        lam_star = float(path[-1])
    elif over == 0:
        raise UnreachableSupportError(
            f"active set already exceeds {target_support} at the null threshold"
        )
    else:
        lo, hi = float(path[over]), float(path[over - 1])
        while (hi - lo) / hi > rel_tol:
            mid = float(np.sqrt(lo * hi))
            if _lasso_active_size(xs, yc, mid, opt) <= target_support:
                hi = mid
            else:
                lo = mid
        lam_star = hi
    if _lasso_active_size(xs, yc, lam_star, opt) != target_support:
        raise UnreachableSupportError(
            f"no penalty on the path yields an active set of exactly {target_support}"
        )
    return lam_star


# ------------------------------------------------------- strategy-robust fit

class _RobustObjective:
    """Smooth part of the strategy-robust objective and its gradient.

    value(p) = (1/2) * mean_{i,v} [y_i - b0 - beta@bliss_i - gamma_i(v) q]^2
               + (w/2) * mean_{i,v} [gamma_i(v) q / 2]
    with q = beta' inv_cost beta. The shock average enters only through the
    first two moments of V, which makes the full deterministic enumeration
    exact at O(N) per evaluation.
    """

    def __init__(self, pop: Population, costs: CostModel, welfare_weight: float):
        if costs.n_features != pop.n_features:
            raise DimensionMismatchError("cost model and population dimensions differ")
        self.x = pop.bliss
        self.y = pop.outcomes
        self.inv_cost = costs.inv_cost
        self.n = pop.n_agents
        self.w = welfare_weight
        gb = costs.gamma_base(pop.observables)
        m1, m2 = costs.shock_moments()
        self.gbar = gb + m1
        self.g2 = gb * gb + 2.0 * gb * m1 + m2
        self.mean_gbar = float(np.mean(self.gbar))
        self.mean_g2 = float(np.mean(self.g2))

    def value_grad(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        b0, beta = p[0], p[1:]
        s = self.inv_cost @ beta
        q = float(beta @ s)
        r0 = self.y - b0 - self.x @ beta
        # E_v[r^2] = r0^2 - 2 q r0 gbar + q^2 g2, per agent
        mse = float(np.mean(r0 * r0) - 2.0 * q * np.mean(r0 * self.gbar) + q * q * self.mean_g2)
        val = 0.5 * mse
        # E_v[r], E_v[r * gamma] per agent
        rbar = r0 - q * self.gbar
        rg = r0 * self.gbar - q * self.g2
        g0 = -float(np.mean(rbar))
        gbeta = -(self.x.T @ rbar) / self.n - 2.0 * s * float(np.mean(rg))
        if self.w > 0.0:
            val += 0.5 * self.w * 0.5 * q * self.mean_gbar
            gbeta = gbeta + 0.5 * self.w * self.mean_gbar * s
        return val, np.concatenate(([g0], gbeta))

    def expected_mse(self, p: np.ndarray) -> float:
        b0, beta = p[0], p[1:]
        s = self.inv_cost @ beta
        q = float(beta @ s)
        r0 = self.y - b0 - self.x @ beta
        return float(np.mean(r0 * r0) - 2.0 * q * np.mean(r0 * self.gbar) + q * q * self.mean_g2)


def _restart_points(pop: Population, opt: OptimizerConfig) -> list[np.ndarray]:
    """Start at OLS, at zero, then at seeded perturbations of OLS scaled by
    its own coefficient magnitudes."""
    p_ols = fit_ols(pop).rule.as_vector()
    starts = [p_ols, np.zeros_like(p_ols)]
    rng = np.random.default_rng(opt.seed)
    while len(starts) < opt.restarts:
        starts.append(p_ols + rng.standard_normal(p_ols.size) * np.abs(p_ols))
    return starts[: opt.restarts]


def _minimize_smooth(obj, start, opt, penalty_grad=None, penalty_val=None):
    def fun(p):
        v, g = obj.value_grad(p)
        if penalty_val is not None:
            v += penalty_val(p)
            g = g + penalty_grad(p)
        return v, g

    res = minimize(
        fun, start, jac=True, method="L-BFGS-B",
        options={
            "maxiter": opt.max_iterations,
            "ftol": 1e-16,
            "gtol": opt.gradient_tolerance,
            "maxcor": 20,
        },
    )
    _, grad = fun(res.x)
    converged = bool(res.success) or float(np.max(np.abs(grad))) <= opt.gradient_tolerance
    return res.x, float(res.fun), converged, int(res.nit)


def _minimize_lasso_penalized(obj, start, opt, lam_scaled):
    """LASSO-penalized minimization: proximal-gradient (FISTA) steps locate
    the active set, then an orthant-restricted quasi-Newton polish drives the
    subgradient optimality conditions to tolerance. Coordinates that cross
    zero during a polish are clamped there and the set is re-examined;
    coordinates whose inactive optimality is violated are activated."""
    loose = replace(opt,
                    gradient_tolerance=max(opt.gradient_tolerance, 1e-7),
                    max_iterations=min(opt.max_iterations, 3000))
    p, _, _, total_it = _minimize_fista(obj, np.asarray(start, dtype=float), loose, lam_scaled)
    converged = False
    for _ in range(12):
        signs = np.where(lam_scaled > 0, np.sign(p), 0.0)
        active = (lam_scaled == 0.0) | (p != 0.0)
        idx = np.nonzero(active)[0]

        def fun(q_sub):
            q = np.zeros_like(p)
            q[idx] = q_sub
            v, g = obj.value_grad(q)
            v += float((lam_scaled * signs) @ q)
            g = g + lam_scaled * signs
            return v, g[idx]

        res = minimize(fun, p[idx], jac=True, method="L-BFGS-B",
                       options={"maxiter": opt.max_iterations, "ftol": 1e-18,
                                "gtol": 0.1 * opt.gradient_tolerance})
        total_it += int(res.nit)
        q = np.zeros_like(p)
        q[idx] = res.x
        q[(np.sign(q) * signs) < 0] = 0.0
        p = q
        _, g = obj.value_grad(p)
        comp = g + lam_scaled * np.sign(p)           # stationarity where p != 0
        nonzero = p != 0.0
        free = lam_scaled == 0.0
        worst = 0.0
        if (nonzero | free).any():
            worst = float(np.max(np.abs(comp[nonzero | free])))
        slack = np.abs(g[~nonzero & ~free]) - lam_scaled[~nonzero & ~free]
        if slack.size:
            worst = max(worst, float(np.max(slack, initial=0.0)))
        if worst <= opt.gradient_tolerance:
            converged = True
            break
        violated = (~nonzero) & (~free) & (np.abs(g) > lam_scaled)
        if violated.any():
            k = int(np.argmax(np.abs(g) - lam_scaled))
            p[k] = -np.sign(g[k]) * 1e-12
    fval = obj.value_grad(p)[0] + float(lam_scaled @ np.abs(p))
    return p, fval, converged, total_it


def _minimize_fista(obj, start, opt, lam_scaled):
    """Proximal gradient (FISTA with backtracking) for the LASSO-penalized
    strategy-robust objective. lam_scaled holds the per-coordinate soft
    thresholds (0 for the intercept)."""

    def smooth(p):
        return obj.value_grad(p)

    def penalty(p):
        return float(np.sum(lam_scaled * np.abs(p)))

    def prox(p, step):
        return np.sign(p) * np.maximum(np.abs(p) - step * lam_scaled, 0.0)

    p = np.asarray(start, dtype=float)
    f_p, g_p = smooth(p)
    step = 1.0
    z = p.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, opt.max_iterations + 1):
        f_z, g_z = smooth(z)
        # backtracking line search on the majorizer
        while True:
            cand = prox(z - step * g_z, step)
            d = cand - z
            f_cand, _ = smooth(cand)
            if f_cand <= f_z + float(g_z @ d) + float(d @ d) / (2.0 * step) + 1e-15:
                break
            step *= 0.5
            if step < 1e-18:
                break
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        p_next = cand
        if f_cand + penalty(cand) > f_p + penalty(p):  # monotone restart
            p_next = prox(p - step * g_p, step)
            f_cand, _ = smooth(p_next)
            t_next = 1.0
        z = p_next + ((t - 1.0) / t_next) * (p_next - p)
        p, f_p, g_p = p_next, f_cand, smooth(p_next)[1]
        t = t_next
        gmap = (p - prox(p - step * g_p, step)) / step
        if float(np.max(np.abs(gmap))) <= opt.gradient_tolerance:
            converged = True
            break
        step = min(step * 2.0, 1e12)
    return p, f_p + penalty(p), converged, it


def fit_strategy_robust(pop: Population, costs: CostModel, cfg: FitConfig | None = None) -> FitReport:
    """Fit the decision rule that minimizes counterfactual squared loss when
    agents best-respond to the rule itself.

    The expectation over gaming ability averages over every shock in the cost
    model's empirical set. Quasi-Newton (L-BFGS) with the analytic gradient
    handles the smooth and ridge cases; LASSO penalties use proximal gradient
    steps. Multiple restarts guard against the quartic's local optima; the
    best converged optimum wins, ties broken by restart order.
    """
    cfg = cfg or FitConfig()
    opt = cfg.optimizer
    obj = _RobustObjective(pop, costs, cfg.welfare_weight)
    starts = _restart_points(pop, opt)

    if cfg.penalty_kind in ("lasso", "ridge") and cfg.lam > 0:
        sigma = pop.bliss.std(axis=0)
        if np.any(sigma == 0):
            bad = tuple(pop.feature_names[j] for j in np.nonzero(sigma == 0)[0])
            raise SingularDesignError(
                f"constant feature columns cannot be standardized: {', '.join(bad)}",
                columns=bad,
            )
    else:
        sigma = None

    results = []
    for start in starts:
        if cfg.penalty_kind == "lasso" and cfg.lam > 0:
            lam_scaled = np.concatenate(([0.0], cfg.lam * sigma))
            results.append(_minimize_lasso_penalized(obj, start, opt, lam_scaled))
        elif cfg.penalty_kind == "ridge" and cfg.lam > 0:
            w = np.concatenate(([0.0], sigma * sigma))

            def pval(p, w=w):
                return 0.5 * cfg.lam * float(w @ (p * p))

            def pgrad(p, w=w):
                return cfg.lam * w * p

            results.append(_minimize_smooth(obj, start, opt, pgrad, pval))
        else:
            results.append(_minimize_smooth(obj, start, opt))

    converged_runs = [r for r in results if r[2]]
    pool = converged_runs or results
    best = min(pool, key=lambda r: r[1])
    p_best, obj_val, converged, iters = best
    if not np.isfinite(obj_val):
        raise ConvergenceError("strategy-robust objective is non-finite at the solution")
    rule = DecisionRule(p_best[0], p_best[1:], label="stable")
    report = FitReport(rule, obj.expected_mse(p_best), converged, iters, obj_val, cfg)
    if not converged_runs:
        raise ConvergenceError(
            f"no restart converged within {opt.max_iterations} iterations", best=report
        )
    return report


def fit_strategy_robust_restricted(
    pop: Population, costs: CostModel, cfg: FitConfig, search: str = "enumerate"
) -> FitReport:
    """Best strategy-robust fit among supports of at most ``support_limit``
    features.

    Enumerates all supports for up to 25 features; above that, pass
    search="greedy" for forward selection on the penalized objective. Ties in
    objective value (within 1e-10) go to the lexicographically smallest
    feature-index set.
    """
    if cfg.support_limit is None:
        raise InvalidInputError("cfg.support_limit is required for a restricted fit")
    k = pop.n_features
    limit = min(cfg.support_limit, k)
    if limit == k:
        return fit_strategy_robust(pop, costs, cfg)
    if search == "enumerate" and k > 25:
        raise InvalidInputError(
            "exhaustive support enumeration is limited to 25 features; "
            'pass search="greedy" for forward selection'
        )

    def fit_support(support: tuple[int, ...]) -> tuple[float, FitReport]:
        idx = list(support)
        sub_pop = pop.restrict_features(idx)
        sub_costs = CostModel(
            costs.inv_cost[np.ix_(idx, idx)], costs.omega, costs.gaming_shocks
        )
        rep = fit_strategy_robust(sub_pop, sub_costs, cfg)
        beta = np.zeros(k)
        beta[idx] = rep.rule.coefficients
        rule = DecisionRule(rep.rule.intercept, beta, label="stable")
        return rep.objective_value, replace(rep, rule=rule)

    if search == "enumerate":
        candidates = [
            tuple(c)
            for size in range(1, limit + 1)
            for c in itertools.combinations(range(k), size)
        ]
    elif search == "greedy":
        chosen: list[int] = []
        while len(chosen) < limit:
            scored = []
            for j in range(k):
                if j in chosen:
                    continue
                obj_val, _ = fit_support(tuple(sorted(chosen + [j])))
                scored.append((obj_val, j))
            chosen.append(min(scored)[1])
        candidates = [tuple(sorted(chosen))]
    else:
        raise InvalidInputError(f"unknown search mode {search!r}")

    best_obj, best_rep, best_support = np.inf, None, None
    for support in candidates:
        obj_val, rep = fit_support(support)
        if obj_val < best_obj - 1e-10 or (
            abs(obj_val - best_obj) <= 1e-10 and support < best_support
        ):
            best_obj, best_rep, best_support = obj_val, rep, support
    return best_rep


# ------------------------------------------------------------ cross validation

def _fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds
    return fold_of


def cross_validate_lambda(
    pop: Population,
    penalty_kind: str,
    folds: int,
    seed: int,
    grid: np.ndarray | None = None,
) -> float:
    """Pick the penalty by K-fold CV of the naive (no-manipulation) fit.

    Ground truth is observable in the unmanipulated sample, so the held-out
    squared error of the plain penalized regression is the criterion. The
    grid is a 50-point logarithmic ladder anchored at the null threshold and
    scanned from large to small, so ties resolve to the more parsimonious
    penalty. Fold membership is a pure function of (seed, agent index).
    """
    if folds < 2:
        raise InvalidInputError("folds must be at least 2")
    if penalty_kind not in ("lasso", "ridge"):
        raise InvalidInputError("penalty_kind must be lasso or ridge")
    if grid is None:
        anchor = lasso_null_lambda(pop)
        if penalty_kind == "lasso":
            grid = anchor * np.logspace(0, -5, 50)
        else:
            grid = anchor * np.logspace(1.5, -5, 50)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidInputError("empty penalty grid")
    fold_of = _fold_assignment(pop.n_agents, folds, seed)

    errors = np.zeros(grid.size)
    for f in range(folds):
        test = fold_of == f
        train_pop = Population(
            pop.bliss[~test], pop.outcomes[~test],
            pop.gaming[~test], pop.observables[~test], pop.feature_names,
        )
        for gi, lam in enumerate(grid):
            if penalty_kind == "lasso":
                rep = fit_lasso(train_pop, float(lam))
            else:
                rep = fit_ridge(train_pop, float(lam))
            pred = rep.rule.intercept + pop.bliss[test] @ rep.rule.coefficients
            errors[gi] += float(np.mean((pop.outcomes[test] - pred) ** 2))
    return float(grid[int(np.argmin(errors))])


def decision_lambda(pop: Population, support: int, folds: int = 10, seed: int = 0) -> float:
    """Penalty for an interpretable rule of ``support`` features:
    max(cross-validated penalty, smallest penalty giving that support size)."""
    lam_cv = cross_validate_lambda(pop, "lasso", folds, seed)
    lam_support = lasso_support_lambda(pop, support)
    return max(lam_cv, lam_support)
