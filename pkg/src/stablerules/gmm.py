"""Estimation of manipulation-cost primitives from incentivized panel data.

A panel records person-week behavior under randomly assigned incentive
vectors. Control weeks (all-zero incentives) identify types and week effects;
"simple" weeks (exactly one incentivized behavior) identify the inverse cost
matrix and gaming-ability heterogeneity. Five moment families are stacked
into an identity-weighted squared loss:

  (i)   incentives are orthogonal to idiosyncratic behavior shocks, one
        moment per behavior pair (j, k);
  (ii)  shocks are mean zero within each (week, behavior) cell, defining the
        week effects;
  (iii) shocks are mean zero within each (agent, behavior) cell, defining
        bliss behaviors;
  (iv)  unobserved gaming shocks are mean zero, via the per-observation
        quotient (x_ikt - bliss_ik - mu_kt) / (inv_cost @ beta_it)_k minus
        exp(-omega @ z_i), pooled over incentivized observations;
  (v)   the same quotient deviations are orthogonal to each observable
        covariate.

Types and week effects are profiled out in closed form (alternating
least-squares updates) inside the outer minimization over the cost
parameters, with diagonals kept positive through a log parametrization.
Fitted unobserved-gaming shocks do not feed back into a second-stage
re-estimation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    IdentificationError,
    InvalidInputError,
)
from .model import CostModel

_BACKFIT_TOL = 1e-12
_BACKFIT_MAX_ITER = 500


@dataclass(frozen=True)
class PanelDataset:
    """Long-format person-week panel plus per-agent covariates.

    Rows where ``opted_in`` is false are kept by the loader but dropped from
    all estimation. Weeks with two or more incentivized behaviors ("complex"
    rules) are accepted in the schema and excluded from the moments unless
    explicitly included.
    """

    agent_ids: np.ndarray      # (rows,) int labels
    weeks: np.ndarray          # (rows,) int labels
    behaviors: np.ndarray      # (rows, K)
    incentives: np.ndarray     # (rows, K)
    opted_in: np.ndarray       # (rows,) bool
    covariate_agent_ids: np.ndarray  # (N,)
    covariates: np.ndarray     # (N, P)

    def __post_init__(self):
        rows = self.behaviors.shape[0]
        if self.incentives.shape != self.behaviors.shape:
            raise DimensionMismatchError("incentives and behaviors shapes differ")
        for name in ("agent_ids", "weeks", "opted_in"):
            if getattr(self, name).shape[0] != rows:
                raise DimensionMismatchError(f"{name} length must match rows")
        agents, agent_idx = np.unique(self.agent_ids, return_inverse=True)
        weeks, week_idx = np.unique(self.weeks, return_inverse=True)
        cov_order = {int(a): i for i, a in enumerate(self.covariate_agent_ids)}
        missing = [int(a) for a in agents if int(a) not in cov_order]
        if missing:
            raise InvalidInputError(f"covariates missing for agents {missing[:10]}")
        cov = self.covariates[[cov_order[int(a)] for a in agents]]
        nonzero = np.count_nonzero(self.incentives, axis=1)
        object.__setattr__(self, "_agents", agents)
        object.__setattr__(self, "_weeks", weeks)
        object.__setattr__(self, "_agent_idx", agent_idx)
        object.__setattr__(self, "_week_idx", week_idx)
        object.__setattr__(self, "_cov", np.asarray(cov, dtype=float))
        object.__setattr__(self, "_n_incentivized", nonzero)

    # -- derived views -------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.behaviors.shape[0]

    @property
    def n_features(self) -> int:
        return self.behaviors.shape[1]

    @property
    def n_agents(self) -> int:
        return len(self._agents)

    @property
    def n_weeks(self) -> int:
        return len(self._weeks)

    @property
    def n_covariates(self) -> int:
        return self._cov.shape[1]

    @property
    def agent_order(self) -> np.ndarray:
        return self._agents

    @property
    def week_order(self) -> np.ndarray:
        return self._weeks

    @property
    def agent_covariates(self) -> np.ndarray:
        """Covariates aligned with ``agent_order``."""
        return self._cov

    def row_kind(self) -> np.ndarray:
        """0 = control week, 1 = simple challenge, 2 = complex rule."""
        return np.minimum(self._n_incentivized, 2)

    def included_mask(self, include_complex: bool = False) -> np.ndarray:
        mask = np.asarray(self.opted_in, dtype=bool)
        if not include_complex:
            mask = mask & (self._n_incentivized <= 1)
        return mask


@dataclass(frozen=True)
class GmmMoments:
    """Sample moment deviations by family, plus quotient diagnostics."""

    incentive_orthogonality: np.ndarray  # (K, K), entry [k, j]
    week_moments: np.ndarray             # (T, K)
    bliss_moments: np.ndarray            # (N, K)
    shock_mean: float
    shock_covariate: np.ndarray          # (P,)
    quotient_exclusions: int

    def loss(self) -> float:
        return float(
            np.sum(self.incentive_orthogonality ** 2)
            + np.sum(self.week_moments ** 2)
            + np.sum(self.bliss_moments ** 2)
            + self.shock_mean ** 2
            + np.sum(self.shock_covariate ** 2)
        )


@dataclass(frozen=True)
class PrimitivesEstimate:
    """Jointly estimated model primitives.

    ``bliss`` rows follow ``agent_order``; ``week_effects`` rows follow
    ``week_order`` and sum to zero (columnwise) over the weeks that entered
    estimation. ``gmm_loss`` is the identity-weighted moment loss at the
    optimum, penalty excluded.
    """

    bliss: np.ndarray
    week_effects: np.ndarray
    inv_cost: np.ndarray
    omega: np.ndarray
    gaming_shocks: np.ndarray
    gmm_loss: float
    lambdas: tuple[float, float]
    agent_order: np.ndarray
    week_order: np.ndarray
    standard_errors: dict[str, float] | None = None
    winsorized_fraction: float = 0.0
    quotient_exclusions: int = 0
    excluded_gaming_agents: int = 0
    converged: bool = True

    def to_cost_model(self, feature_names=None) -> CostModel:
        return CostModel(self.inv_cost, self.omega, self.gaming_shocks, feature_names)


@dataclass(frozen=True)
class GamingBackout:
    """Shrunk and winsorized unobserved-gaming shocks."""

    shocks: np.ndarray
    winsorized_fraction: float
    lower_bound: float
    excluded_agents: int
    raw_mean: float


# ------------------------------------------------------------------- helpers

def _arrays(panel: PanelDataset, include_complex: bool):
    mask = panel.included_mask(include_complex)
    ai = panel._agent_idx[mask]
    wi = panel._week_idx[mask]
    x = panel.behaviors[mask]
    b = panel.incentives[mask]
    return mask, ai, wi, np.asarray(x, dtype=float), np.asarray(b, dtype=float)


def _group_mean(values: np.ndarray, idx: np.ndarray, n_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Columnwise group means; groups with no rows get mean 0."""
    counts = np.bincount(idx, minlength=n_groups).astype(float)
    sums = np.zeros((n_groups, values.shape[1]))
    np.add.at(sums, idx, values)
    safe = np.maximum(counts, 1.0)
    return sums / safe[:, None], counts


def _two_way_fit(d: np.ndarray, ai: np.ndarray, wi: np.ndarray, n: int, t: int):
    """Least-squares x̲_i + mu_t decomposition of d with sum_t mu_t = 0 over
    weeks that appear. Alternating closed-form updates (exact on balanced
    panels, iterated to tolerance otherwise)."""
    mu = np.zeros((t, d.shape[1]))
    xbar = np.zeros((n, d.shape[1]))
    week_counts = np.bincount(wi, minlength=t)
    present = week_counts > 0
    for _ in range(_BACKFIT_MAX_ITER):
        xbar_new, _ = _group_mean(d - mu[wi], ai, n)
        mu_new, _ = _group_mean(d - xbar_new[ai], wi, t)
        shift = mu_new[present].mean(axis=0) if present.any() else 0.0
        mu_new[present] -= shift
        xbar_new += shift
        delta = max(
            float(np.max(np.abs(mu_new - mu), initial=0.0)),
            float(np.max(np.abs(xbar_new - xbar), initial=0.0)),
        )
        mu, xbar = mu_new, xbar_new
        if delta <= _BACKFIT_TOL:
            break
    return xbar, mu


def estimate_types(panel: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    """Types and week effects from control weeks only.

    Solves the two-way means problem min sum ||x_it - x̲_i - mu_t||^2 with
    the week effects normalized to sum to zero over the control weeks.
    Weeks never observed as controls get a zero week effect. Raises
    IdentificationError naming agents with no control-week observation.
    """
    mask = panel.included_mask() & (panel._n_incentivized == 0)
    ai = panel._agent_idx[mask]
    wi = panel._week_idx[mask]
    seen = np.zeros(panel.n_agents, dtype=bool)
    seen[ai] = True
    if not seen.all():
        missing = [int(a) for a in panel.agent_order[~seen]]
        raise IdentificationError(
            f"agents with no control-week observation: {missing[:20]}",
            detail=missing,
        )
    x = np.asarray(panel.behaviors[mask], dtype=float)
    return _two_way_fit(x, ai, wi, panel.n_agents, panel.n_weeks)


# ------------------------------------------------------------------- moments

def _residuals(x, b, ai, wi, xbar, mu, inv_cost, gamma_base):
    response = gamma_base[ai][:, None] * (b @ inv_cost)
    return x - xbar[ai] - mu[wi] - response


def _quotient_terms(x, b, ai, wi, xbar, mu, inv_cost, gamma_base):
    """Per-observation gaming quotients for simple incentivized rows.

    Returns (terms, agent index per term, incentivized behavior per term,
    exclusion count). An observation is excluded when its incentivized
    behavior has a zero predicted response (inv_cost @ beta)_k, which would
    divide by zero.
    """
    n_nonzero = np.count_nonzero(b, axis=1)
    simple = n_nonzero == 1
    if not simple.any():
        return np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int), 0
    rows = np.nonzero(simple)[0]
    ks = np.argmax(b[rows] != 0, axis=1)
    denom = (b[rows] @ inv_cost)[np.arange(rows.size), ks]
    ok = denom != 0.0
    excluded = int(np.sum(~ok))
    rows, ks, denom = rows[ok], ks[ok], denom[ok]
    num = x[rows, ks] - xbar[ai[rows], ks] - mu[wi[rows], ks]
    terms = num / denom - gamma_base[ai[rows]]
    return terms, ai[rows], ks, excluded


def _moment_families(panel, xbar, mu, inv_cost, omega, include_complex) -> GmmMoments:
    _, ai, wi, x, b = _arrays(panel, include_complex)
    if ai.size == 0:
        raise InvalidInputError("panel has no included observations")
    z = panel.agent_covariates
    gamma_base = np.exp(-z @ omega) if z.shape[1] else np.ones(panel.n_agents)
    eps = _residuals(x, b, ai, wi, xbar, mu, inv_cost, gamma_base)

    fam1 = b.T @ eps / ai.size                       # [k, j] = mean beta_k * eps_j
    week_means, _ = _group_mean(eps, wi, panel.n_weeks)
    bliss_means, _ = _group_mean(eps, ai, panel.n_agents)

    terms, term_ai, _, excluded = _quotient_terms(x, b, ai, wi, xbar, mu, inv_cost, gamma_base)
    if terms.size:
        fam4 = float(np.mean(terms))
        fam5 = z[term_ai].T @ terms / terms.size if z.shape[1] else np.zeros(0)
    else:
        fam4 = 0.0
        fam5 = np.zeros(z.shape[1])
    return GmmMoments(fam1, week_means, bliss_means, fam4, np.asarray(fam5), excluded)


def gmm_moments(params: PrimitivesEstimate, panel: PanelDataset,
                include_complex: bool = False) -> GmmMoments:
    """All five moment families evaluated at the given parameter values."""
    if params.bliss.shape != (panel.n_agents, panel.n_features):
        raise DimensionMismatchError("bliss shape does not match the panel")
    if params.week_effects.shape != (panel.n_weeks, panel.n_features):
        raise DimensionMismatchError("week_effects shape does not match the panel")
    return _moment_families(
        panel, params.bliss, params.week_effects,
        params.inv_cost, params.omega, include_complex,
    )


def gmm_loss(params: PrimitivesEstimate, panel: PanelDataset,
             include_complex: bool = False) -> float:
    """Identity-weighted sum of squared sample-moment deviations."""
    return gmm_moments(params, panel, include_complex).loss()


# ------------------------------------------------------------------ fitting

def _pack_theta(inv_cost, omega, fit_offdiag, k):
    parts = [np.log(np.diag(inv_cost))]
    if fit_offdiag:
        iu = np.triu_indices(k, 1)
        parts.append(inv_cost[iu])
    parts.append(np.asarray(omega, dtype=float))
    return np.concatenate(parts)


def _unpack_theta(theta, k, p, fit_offdiag):
    diag = np.exp(theta[:k])
    pos = k
    inv_cost = np.diag(diag)
    if fit_offdiag:
        iu = np.triu_indices(k, 1)
        m = k * (k - 1) // 2
        inv_cost[iu] = theta[pos:pos + m]
        inv_cost[(iu[1], iu[0])] = theta[pos:pos + m]
        pos += m
    omega = theta[pos:pos + p]
    return inv_cost, omega


def _initial_costs(panel, xbar0, mu0, include_complex):
    """Per-behavior response slopes as starting diagonal inverse costs.

    Residuals and incentives are demeaned within week before the slope, so
    week effects missing from the control-only estimates do not leak in."""
    _, ai, wi, x, b = _arrays(panel, include_complex)
    k = panel.n_features
    diag0 = np.full(k, 0.1)
    n_nonzero = np.count_nonzero(b, axis=1)
    simple = n_nonzero == 1
    rows = np.nonzero(simple)[0]
    if rows.size:
        ks = np.argmax(b[rows] != 0, axis=1)
        for kk in range(k):
            sel = rows[ks == kk]
            if sel.size == 0:
                continue
            bk = b[sel, kk]
            resid = x[sel, kk] - xbar0[ai[sel], kk] - mu0[wi[sel], kk]
            for w in np.unique(wi[sel]):
                in_w = wi[sel] == w
                resid[in_w] -= resid[in_w].mean()
                bk = bk.copy()
                bk[in_w] -= bk[in_w].mean()
            denom = float(bk @ bk)
            if denom > 0:
                diag0[kk] = float(np.clip(resid @ bk / denom, 1e-3, 1e3))
    return diag0


def fit_primitives(
    panel: PanelDataset,
    lambdas: tuple[float, float] = (0.0, 0.0),
    include_complex: bool = False,
    shrinkage_phi: float = 0.005,
    compute_se: bool = False,
    max_nfev: int | None = None,
    tol: float = 1e-12,
) -> PrimitivesEstimate:
    """Jointly estimate bliss behaviors, week effects, inverse costs, and
    observable gaming loadings by minimizing the moment loss plus the cost
    penalty [lam_d * sum c_kk^2 + lam_o * sum_{j!=k} c_jk^2] * sum_i exp(-2 omega z_i).

    Diagonal inverse costs stay positive through a log parametrization;
    ``lambdas[1] = inf`` drops the off-diagonal parameters entirely, forcing a
    diagonal matrix. Types and week effects are profiled out by alternating
    closed-form updates inside the outer optimization, then the unobserved
    gaming shocks are backed out, shrunk by ``shrinkage_phi``, and winsorized.
    """
    lam_d, lam_o = float(lambdas[0]), float(lambdas[1])
    if lam_d < 0 or lam_o < 0:
        raise InvalidInputError("penalty weights must be nonnegative")
    if not np.isfinite(lam_d):
        raise InvalidInputError("lambda_diag must be finite (only the off-diagonal "
                                "penalty supports inf)")
    k, p = panel.n_features, panel.n_covariates
    z = panel.agent_covariates
    for j in range(p):
        if np.ptp(z[:, j]) == 0.0:
            raise IdentificationError(
                f"covariate z_{j + 1} is constant; omega is not identified",
                detail=(f"z_{j + 1}",),
            )
    _, ai, wi, x, b = _arrays(panel, include_complex)
    if not np.any(np.count_nonzero(b, axis=1) == 0):
        raise InvalidInputError("panel has no control weeks")
    if not np.any(np.count_nonzero(b, axis=1) == 1):
        raise InvalidInputError("panel has no incentivized (simple) weeks")
    seen = np.zeros(panel.n_agents, dtype=bool)
    seen[ai] = True
    if not seen.all():
        missing = [int(a) for a in panel.agent_order[~seen]]
        raise IdentificationError(
            f"agents with no included observations: {missing[:20]}", detail=missing
        )

    fit_offdiag = np.isfinite(lam_o) and k > 1
    xbar0, mu0 = estimate_types(panel)
    diag0 = _initial_costs(panel, xbar0, mu0, include_complex)
    theta0 = _pack_theta(np.diag(diag0), np.zeros(p), fit_offdiag, k)

    def profile(inv_cost, omega):
        gamma_base = np.exp(-z @ omega) if p else np.ones(panel.n_agents)
        d = x - gamma_base[ai][:, None] * (b @ inv_cost)
        return _two_way_fit(d, ai, wi, panel.n_agents, panel.n_weeks)

    def residual_vector(theta):
        inv_cost, omega = _unpack_theta(theta, k, p, fit_offdiag)
        xbar, mu = profile(inv_cost, omega)
        moms = _moment_families(panel, xbar, mu, inv_cost, omega, include_complex)
        pieces = [moms.incentive_orthogonality.ravel(),
                  [moms.shock_mean], moms.shock_covariate]
        s_omega = float(np.sum(np.exp(-2.0 * (z @ omega)))) if p else float(panel.n_agents)
        if lam_d > 0:
            pieces.append(np.sqrt(lam_d * s_omega) * np.diag(inv_cost))
        if fit_offdiag and lam_o > 0:
            iu = np.triu_indices(k, 1)
            pieces.append(np.sqrt(2.0 * lam_o * s_omega) * inv_cost[iu])
        return np.concatenate([np.atleast_1d(np.asarray(q, dtype=float)) for q in pieces])

    # diagonal inverse costs live on a log scale, floored so that a penalty
    # pushing costs toward infinity converges cleanly at the boundary
    n_theta = theta0.size
    lower = np.full(n_theta, -np.inf)
    upper = np.full(n_theta, np.inf)
    lower[:k] = np.log(1e-10)
    upper[:k] = np.log(1e8)
    result = least_squares(
        residual_vector, np.clip(theta0, lower + 1e-9, upper - 1e-9),
        method="trf", bounds=(lower, upper),
        xtol=tol, ftol=tol, gtol=tol,
        max_nfev=max_nfev if max_nfev is not None else 1000 * n_theta,
    )
    inv_cost, omega = _unpack_theta(result.x, k, p, fit_offdiag)
    xbar, mu = profile(inv_cost, omega)
    moms = _moment_families(panel, xbar, mu, inv_cost, omega, include_complex)

    partial = PrimitivesEstimate(
        bliss=xbar, week_effects=mu, inv_cost=inv_cost, omega=omega,
        gaming_shocks=np.zeros(1), gmm_loss=moms.loss(), lambdas=(lam_d, lam_o),
        agent_order=panel.agent_order, week_order=panel.week_order,
        quotient_exclusions=moms.quotient_exclusions,
        converged=bool(result.success),
    )
    if not result.success:
        raise ConvergenceError(
            f"primitives estimation did not converge: {result.message}", best=partial
        )

    backout = back_out_gaming(panel, partial, phi=shrinkage_phi,
                              include_complex=include_complex)
    se = _standard_errors(residual_vector, result.x, k, p, fit_offdiag) if compute_se else None
    return PrimitivesEstimate(
        bliss=xbar, week_effects=mu, inv_cost=inv_cost, omega=omega,
        gaming_shocks=backout.shocks, gmm_loss=moms.loss(), lambdas=(lam_d, lam_o),
        agent_order=panel.agent_order, week_order=panel.week_order,
        standard_errors=se,
        winsorized_fraction=backout.winsorized_fraction,
        quotient_exclusions=moms.quotient_exclusions,
        excluded_gaming_agents=backout.excluded_agents,
        converged=True,
    )


def _standard_errors(residual_vector, theta, k, p, fit_offdiag) -> dict[str, float]:
    """Per-parameter standard errors from a positive-definite approximation of
    the inverse Hessian of the squared-moment loss (natural parametrization
    for the diagonals, via the chain rule through the log)."""

    def loss(theta_):
        r = residual_vector(theta_)
        return float(r @ r)

    m = theta.size
    h = 1e-5 * np.maximum(np.abs(theta), 1.0)
    hess = np.zeros((m, m))
    f0 = loss(theta)
    for i in range(m):
        for j in range(i, m):
            ei = np.zeros(m); ei[i] = h[i]
            ej = np.zeros(m); ej[j] = h[j]
            fpp = loss(theta + ei + ej)
            fpm = loss(theta + ei - ej)
            fmp = loss(theta - ei + ej)
            fmm = loss(theta - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    vals, vecs = np.linalg.eigh(hess)
    floor = max(1e-10, 1e-10 * float(np.max(np.abs(vals))), np.finfo(float).tiny)
    vals = np.maximum(vals, floor)
    cov = vecs @ np.diag(1.0 / vals) @ vecs.T
    se_theta = np.sqrt(np.maximum(np.diag(cov), 0.0))

    names: list[str] = []
    scale = np.ones(m)
    for i in range(k):
        names.append(f"c_{i + 1}{i + 1}")
        scale[i] = np.exp(theta[i])  # d c / d log c
    pos = k
    if fit_offdiag:
        for i, j in zip(*np.triu_indices(k, 1)):
            names.append(f"c_{i + 1}{j + 1}")
        pos += k * (k - 1) // 2
    for j in range(p):
        names.append(f"omega_{j + 1}")
    _ = f0
    return {name: float(se_theta[i] * scale[i]) for i, name in enumerate(names)}


# ------------------------------------------------------------------ back-out

def back_out_gaming(
    panel: PanelDataset,
    fitted: PrimitivesEstimate,
    phi: float = 0.005,
    include_complex: bool = False,
) -> GamingBackout:
    """Back out unobserved gaming shocks, shrink them by ``phi``, and
    winsorize from below so every implied gaming ability stays nonnegative.

    The raw shock for agent i averages, over each incentivized behavior k and
    its weeks, the quotient (x_ikt - bliss_ik - mu_kt) / (inv_cost @ beta)_k
    minus exp(-omega @ z_i). The winsorization floor is the smallest shrunk
    value that keeps exp(-omega @ z_j) + v nonnegative for every agent j
    (or that bound itself when no shrunk value clears it). Agents with no
    incentivized weeks are excluded with a count.
    """
    if phi <= 0:
        raise InvalidInputError("shrinkage phi must be positive")
    _, ai, wi, x, b = _arrays(panel, include_complex)
    z = panel.agent_covariates
    omega = fitted.omega
    gamma_base = np.exp(-z @ omega) if z.shape[1] else np.ones(panel.n_agents)
    terms, term_ai, term_ks, _ = _quotient_terms(
        x, b, ai, wi, fitted.bliss, fitted.week_effects, fitted.inv_cost, gamma_base
    )
    # average within (agent, k) first, then across the agent's behaviors
    cell = term_ai * panel.n_features + term_ks
    cell_sum = np.bincount(cell, weights=terms, minlength=panel.n_agents * panel.n_features)
    cell_cnt = np.bincount(cell, minlength=panel.n_agents * panel.n_features)
    cell_sum = cell_sum.reshape(panel.n_agents, panel.n_features)
    cell_cnt = cell_cnt.reshape(panel.n_agents, panel.n_features)
    has_cell = cell_cnt > 0
    with np.errstate(invalid="ignore"):
        cell_mean = np.where(has_cell, cell_sum / np.maximum(cell_cnt, 1), 0.0)
    k_i = has_cell.sum(axis=1)
    included = k_i > 0
    excluded = int(np.sum(~included))
    raw = cell_mean.sum(axis=1)[included] / k_i[included]

    bound = -float(np.min(gamma_base))
    shrunk = phi * raw
    above = shrunk[shrunk >= bound]
    lower = float(np.min(above)) if above.size else bound
    shocks = np.maximum(shrunk, lower)
    winsorized = float(np.mean(shrunk < lower)) if shrunk.size else 0.0
    return GamingBackout(
        shocks=shocks,
        winsorized_fraction=winsorized,
        lower_bound=lower,
        excluded_agents=excluded,
        raw_mean=float(np.mean(raw)) if raw.size else 0.0,
    )


# ------------------------------------------------------------ cross validation

DEFAULT_DIAG_GRID = (1000.0, 100.0, 10.0, 1.0, 0.1, 0.01, 0.001, 0.0)
DEFAULT_OFFDIAG_GRID = (np.inf, 1000.0, 100.0, 10.0, 1.0, 0.1, 0.01, 0.001, 0.0)


def cv_lambda_costs(
    panel: PanelDataset,
    folds: int,
    grid: tuple[tuple[float, ...], tuple[float, ...]] | None = None,
    seed: int = 0,
    include_complex: bool = False,
    **fit_kwargs,
) -> tuple[float, float]:
    """Choose the cost-penalty pair by agent-level cross validation.

    Folds split agents. For each candidate pair the primitives are fit on the
    training agents; held-out agents get their bliss from their own control
    weeks (behavior minus the fitted week effect) and their incentivized
    simple-week behaviors are predicted as bliss + week effect + predicted
    response. The pair minimizing mean held-out squared error wins; ties go
    to the earlier (more penalized) grid point.
    """
    if folds < 2:
        raise InvalidInputError("folds must be at least 2")
    diag_grid, offdiag_grid = grid if grid is not None else (DEFAULT_DIAG_GRID, DEFAULT_OFFDIAG_GRID)
    order = np.random.default_rng(seed).permutation(panel.n_agents)
    fold_of = np.empty(panel.n_agents, dtype=int)
    fold_of[order] = np.arange(panel.n_agents) % folds

    pairs = list(itertools.product(diag_grid, offdiag_grid))
    errors = np.zeros(len(pairs))
    counts = np.zeros(len(pairs))
    for f in range(folds):
        holdout_agents = fold_of == f
        row_holdout = holdout_agents[panel._agent_idx]
        train = _subset_panel(panel, ~row_holdout)
        for gi, (lam_d, lam_o) in enumerate(pairs):
            try:
                fit = fit_primitives(train, (lam_d, lam_o),
                                     include_complex=include_complex, **fit_kwargs)
            except ConvergenceError as exc:
                # score the best iterate; CV only ranks the penalty pairs
                fit = exc.best
            sq, n_obs = _holdout_error(panel, fit, holdout_agents, include_complex)
            errors[gi] += sq
            counts[gi] += n_obs
    mse = errors / np.maximum(counts, 1.0)
    best = int(np.argmin(mse))
    return float(pairs[best][0]), float(pairs[best][1])


def _subset_panel(panel: PanelDataset, row_mask: np.ndarray) -> PanelDataset:
    keep_agents = np.unique(panel.agent_ids[row_mask])
    keep_cov = np.isin(panel.covariate_agent_ids, keep_agents)
    return PanelDataset(
        agent_ids=panel.agent_ids[row_mask],
        weeks=panel.weeks[row_mask],
        behaviors=panel.behaviors[row_mask],
        incentives=panel.incentives[row_mask],
        opted_in=panel.opted_in[row_mask],
        covariate_agent_ids=panel.covariate_agent_ids[keep_cov],
        covariates=panel.covariates[keep_cov],
    )


def _holdout_error(panel, fit: PrimitivesEstimate, holdout_agents, include_complex):
    """Squared prediction error for held-out agents' incentivized behavior."""
    week_pos = {int(w): i for i, w in enumerate(fit.week_order)}
    _, ai, wi, x, b = _arrays(panel, include_complex)
    ho_rows = holdout_agents[ai]
    z = panel.agent_covariates
    gamma_base = np.exp(-z @ fit.omega) if z.shape[1] else np.ones(panel.n_agents)

    mu_full = np.zeros((panel.n_weeks, panel.n_features))
    for i, w in enumerate(panel.week_order):
        if int(w) in week_pos:
            mu_full[i] = fit.week_effects[week_pos[int(w)]]

    control = np.count_nonzero(b, axis=1) == 0
    d = x - mu_full[wi]
    bliss_ho, counts = _group_mean(
        d[control & ho_rows], ai[control & ho_rows], panel.n_agents
    )
    target = ho_rows & ~control
    usable = target & (counts[ai] > 0)
    if not usable.any():
        return 0.0, 0
    pred = (
        bliss_ho[ai[usable]]
        + mu_full[wi[usable]]
        + gamma_base[ai[usable]][:, None] * (b[usable] @ fit.inv_cost)
    )
    err = x[usable] - pred
    return float(np.sum(err * err)), int(err.size)


# -------------------------------------------------------------- elicitation

def elicited_costs(predicted_shifts: np.ndarray, incentives: np.ndarray,
                   gamma_bar: float = 1.0) -> np.ndarray:
    """Diagonal cost estimates from externally predicted behavior shifts:
    alpha_jj = gamma_bar * beta_j / max(0.001, shift_jj), floor as printed."""
    shifts = np.asarray(predicted_shifts, dtype=float)
    beta = np.asarray(incentives, dtype=float)
    if shifts.shape != beta.shape:
        raise DimensionMismatchError("shifts and incentives must have the same shape")
    if np.any(beta <= 0):
        raise InvalidInputError("incentives must be positive")
    return gamma_bar * beta / np.maximum(0.001, shifts)
