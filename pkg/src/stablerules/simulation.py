"""Synthetic worlds and the Monte Carlo experiments built on them: data
generation, the iterated retrain-after-manipulation loop, cost
misspecification, comparative-statics sweeps, the manipulation-as-signal
scenario, and transparency-cost bounds.

Randomness: every draw flows from numpy's PCG64 via ``default_rng(seed)``;
multivariate normals use an eigendecomposition factor of the covariance, and
derived streams (replications, out-of-sample draws) come from
``SeedSequence((seed, *keys))``. This names the generator precisely enough
that another implementation can match the distributions, though not the
bit streams.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .estimators import FitConfig, FitReport, fit_lasso, fit_ols, fit_ridge, fit_strategy_robust
from .model import (
    CostModel,
    DecisionRule,
    Population,
    best_response_matrix,
    counterfactual_loss,
    encode_gaming_observable,
    expected_counterfactual_loss,
)

_PSD_TOL = 1e-10


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic child seed for a named sub-stream."""
    ss = np.random.SeedSequence((int(base),) + tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DgpConfig:
    """A complete synthetic world: payment rule, bliss distribution, costs,
    gaming-ability rule, and outcome noise.

    ``gamma_rule`` kinds:
      constant         {"kind": "constant", "value": g}
      threshold        {"kind": "threshold", "feature": j, "cut": c, "low": a, "high": b}
      inverse_uniform  {"kind": "inverse_uniform", "low": a, "high": b}
                       (1/gamma drawn uniformly on (a, b])
      signal           {"kind": "signal", "u_coef": 0.1, "floor": 0.1}
                       (gamma = max(u_coef * u + e^3, floor) with u standard
                       normal and e the outcome noise draw, so gaming ability
                       is correlated with the unexplained outcome)
    An optional "scale" key multiplies the drawn abilities.
    """

    intercept: float
    slopes: tuple[float, ...]
    bliss_cov: tuple[tuple[float, ...], ...]
    cost_matrix: tuple[tuple[float, ...], ...]
    gamma_rule: Mapping
    noise_sigma: float
    n_agents: int
    seed: int
    bliss_mean: tuple[float, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be nonnegative")
        if self.n_agents < 1:
            raise InvalidInputError("n_agents must be positive")
        object.__setattr__(self, "slopes", tuple(float(v) for v in self.slopes))
        object.__setattr__(self, "bliss_cov", tuple(tuple(float(v) for v in r) for r in self.bliss_cov))
        object.__setattr__(self, "cost_matrix", tuple(tuple(float(v) for v in r) for r in self.cost_matrix))
        object.__setattr__(self, "gamma_rule", dict(self.gamma_rule))
        if self.bliss_mean is not None:
            object.__setattr__(self, "bliss_mean", tuple(float(v) for v in self.bliss_mean))

    @property
    def n_features(self) -> int:
        return len(self.slopes)

    @property
    def true_rule(self) -> DecisionRule:
        return DecisionRule(self.intercept, np.array(self.slopes), label="dgp")

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slopes": list(self.slopes),
            "bliss_mean": list(self.bliss_mean) if self.bliss_mean else None,
            "bliss_cov": [list(r) for r in self.bliss_cov],
            "cost_matrix": [list(r) for r in self.cost_matrix],
            "gamma_rule": dict(self.gamma_rule),
            "noise_sigma": self.noise_sigma,
            "n_agents": self.n_agents,
            "seed": self.seed,
            "feature_names": list(self.feature_names) if self.feature_names else None,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "DgpConfig":
        return DgpConfig(
            intercept=float(d["intercept"]),
            slopes=tuple(d["slopes"]),
            bliss_cov=tuple(tuple(r) for r in d["bliss_cov"]),
            cost_matrix=tuple(tuple(r) for r in d["cost_matrix"]),
            gamma_rule=dict(d["gamma_rule"]),
            noise_sigma=float(d["noise_sigma"]),
            n_agents=int(d["n_agents"]),
            seed=int(d["seed"]),
            bliss_mean=tuple(d["bliss_mean"]) if d.get("bliss_mean") else None,
            feature_names=tuple(d["feature_names"]) if d.get("feature_names") else None,
        )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if np.min(vals) < -_PSD_TOL * max(1.0, float(np.max(np.abs(vals)))):
        raise InvalidInputError("bliss_cov is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _draw_gamma(rule: Mapping, rng: np.random.Generator, bliss: np.ndarray,
                noise: np.ndarray) -> np.ndarray:
    kind = rule.get("kind")
    n = bliss.shape[0]
    if kind == "constant":
        gamma = np.full(n, float(rule["value"]))
    elif kind == "threshold":
        j = int(rule["feature"])
        gamma = np.where(bliss[:, j] <= float(rule["cut"]), float(rule["low"]), float(rule["high"]))
    elif kind == "inverse_uniform":
        low, high = float(rule["low"]), float(rule["high"])
        if high <= low or high <= 0:
            raise InvalidInputError("inverse_uniform needs 0 <= low < high")
        inv = low + (high - low) * (1.0 - rng.random(n))  # in (low, high]
        gamma = 1.0 / inv
    elif kind == "signal":
        u = rng.standard_normal(n)
        gamma = np.maximum(float(rule.get("u_coef", 0.1)) * u + noise ** 3,
                           float(rule.get("floor", 0.1)))
    else:
        raise InvalidInputError(f"unknown gamma_rule kind {kind!r}")
    return gamma * float(rule.get("scale", 1.0))


def generate_population(cfg: DgpConfig) -> Population:
    """Draw a population: bliss from the configured normal, outcomes from the
    payment rule plus noise, gaming abilities from the gamma rule. The drawn
    ability is also encoded into the single observable z = -log(gamma), so a
    matching cost model reproduces it exactly.
    """
    k = cfg.n_features
    cov = np.array(cfg.bliss_cov, dtype=float)
    if cov.shape != (k, k):
        raise InvalidInputError("bliss_cov shape must match the number of slopes")
    rng = np.random.default_rng(cfg.seed)
    factor = _psd_factor(cov)
    bliss = rng.standard_normal((cfg.n_agents, k)) @ factor.T
    if cfg.bliss_mean is not None:
        bliss = bliss + np.array(cfg.bliss_mean)
    noise = cfg.noise_sigma * rng.standard_normal(cfg.n_agents)
    y = cfg.intercept + bliss @ np.array(cfg.slopes) + noise
    gamma = _draw_gamma(cfg.gamma_rule, rng, bliss, noise)
    return Population(
        bliss=bliss, outcomes=y, gaming=gamma,
        observables=encode_gaming_observable(gamma),
        feature_names=cfg.feature_names,
    )


def cost_model_for(cfg: DgpConfig) -> CostModel:
    """Cost model matching generate_population's z encoding: the base inverse
    cost with omega = [1] and a degenerate shock at zero, so exp(-z) equals
    each agent's drawn gaming ability."""
    c = np.array(cfg.cost_matrix, dtype=float)
    return CostModel(np.linalg.inv(c), omega=np.array([1.0]),
                     gaming_shocks=np.zeros(1), feature_names=cfg.feature_names)


def generate_world(cfg: DgpConfig) -> tuple[Population, CostModel]:
    return generate_population(cfg), cost_model_for(cfg)


# --------------------------------------------------------------- industry loop

@dataclass(frozen=True)
class IndustryRunReport:
    """Round-by-round rules and both loss columns for the retraining loop.

    Index r of each list is round r; round 0 is the initial rule (OLS on
    unmanipulated data, or the caller's warm start). ``training_rows[r]`` is
    the number of rows the round-r rule was fit on (0 for a supplied warm
    start).
    """

    rules: tuple[DecisionRule, ...]
    losses_no_manip: tuple[float, ...]
    losses_manip: tuple[float, ...]
    mode: str
    initial_rule: DecisionRule | None
    training_rows: tuple[int, ...]
    fallback_rounds: tuple[int, ...] = ()


def _gram_solve(m: np.ndarray, v: np.ndarray, n_rows: int) -> tuple[np.ndarray, bool]:
    """Solve the normal equations; on a numerically singular Gram matrix fall
    back to a ridge-stabilized solve (1e-8, intercept unpenalized)."""
    try:
        if np.linalg.cond(m) < 1e12:
            return np.linalg.solve(m, v), False
    except np.linalg.LinAlgError:
        pass
    stab = np.eye(m.shape[0])
    stab[0, 0] = 0.0
    coef = np.linalg.solve(m / n_rows + 1e-8 * stab, v / n_rows)
    return coef, True


def run_industry_loop(
    pop: Population,
    costs: CostModel,
    rounds: int,
    mode: str = "cumulative",
    initial_rule: DecisionRule | None = None,
) -> IndustryRunReport:
    """Iterate announce-rule / agents-best-respond / refit-OLS.

    Round 0 fits OLS on the unmanipulated data unless ``initial_rule`` is
    given. Each later round r regresses outcomes on behavior generated under
    rule r-1, pooling all periods so far ("cumulative") or using only the
    newest period ("last_period"). A cumulative stack seeded by the round-0
    OLS fit starts with the unmanipulated period; a warm-started stack starts
    empty, since the initial rule was not fit inside the loop.
    """
    if rounds < 1:
        raise InvalidInputError("rounds must be at least 1")
    if mode not in ("cumulative", "last_period"):
        raise InvalidInputError(f"unknown industry mode {mode!r}")
    n = pop.n_agents
    y = pop.outcomes
    design0 = np.column_stack([np.ones(n), pop.bliss])

    if initial_rule is None:
        rule0 = fit_ols(pop).rule
        gram = design0.T @ design0
        moment = design0.T @ y
        stacked_rows = n
        rows0 = n
    else:
        rule0 = initial_rule
        gram = np.zeros((pop.n_features + 1, pop.n_features + 1))
        moment = np.zeros(pop.n_features + 1)
        stacked_rows = 0
        rows0 = 0

    rules = [rule0]
    losses_no = [counterfactual_loss(rule0, pop, costs, manipulated=False)]
    losses_m = [counterfactual_loss(rule0, pop, costs, manipulated=True)]
    training_rows = [rows0]
    fallbacks: list[int] = []

    for r in range(1, rounds + 1):
        responded = best_response_matrix(pop, rules[-1], costs)
        design_r = np.column_stack([np.ones(n), responded])
        if mode == "cumulative":
            gram = gram + design_r.T @ design_r
            moment = moment + design_r.T @ y
            stacked_rows += n
            coef, fell_back = _gram_solve(gram, moment, stacked_rows)
            rows_r = stacked_rows
        else:
            coef, fell_back = _gram_solve(design_r.T @ design_r, design_r.T @ y, n)
            rows_r = n
        if fell_back:
            fallbacks.append(r)
        rule_r = DecisionRule(coef[0], coef[1:], label=f"ols_round_{r}")
        rules.append(rule_r)
        losses_no.append(counterfactual_loss(rule_r, pop, costs, manipulated=False))
        losses_m.append(counterfactual_loss(rule_r, pop, costs, manipulated=True))
        training_rows.append(rows_r)

    return IndustryRunReport(
        tuple(rules), tuple(losses_no), tuple(losses_m),
        mode, initial_rule, tuple(training_rows), tuple(fallbacks),
    )


# ------------------------------------------------------------ misspecification

def misspecify_costs(costs: CostModel, scale: float = 1.0,
                     diagonal_only: bool = True) -> CostModel:
    """Mismeasured costs: optionally drop all off-diagonal cost elements, and
    scale the (cost-units) diagonal. scale=2 with diagonal_only makes every
    behavior look twice as expensive to manipulate as its true own-cost."""
    if scale <= 0:
        raise InvalidInputError("scale must be positive")
    cost_units = costs.cost_view
    if diagonal_only:
        cost_units = np.diag(np.diag(cost_units))
    cost_units = scale * cost_units
    return CostModel(np.linalg.inv(cost_units), costs.omega,
                     costs.gaming_shocks, costs.feature_names)


# ------------------------------------------------------------------- sweeps

SWEEP_AXES = ("global_inverse_gaming", "alpha_22", "alpha_12", "lambda")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    estimator: str
    coef_index: int  # 0 is the intercept
    coef: float
    loss_oos: float


def _estimator_fit(name: str, pop: Population, costs: CostModel, lam: float,
                   welfare_weight: float, seed: int) -> FitReport:
    opt = replace(FitConfig().optimizer, seed=seed)
    if name == "ols":
        return fit_ols(pop)
    if name == "ridge":
        return fit_ridge(pop, lam)
    if name == "lasso":
        return fit_lasso(pop, lam)
    if name == "stable":
        return fit_strategy_robust(pop, costs, FitConfig(welfare_weight=welfare_weight, optimizer=opt))
    if name == "stable_ridge":
        return fit_strategy_robust(
            pop, costs, FitConfig("ridge", lam, welfare_weight, optimizer=opt))
    if name == "stable_lasso":
        return fit_strategy_robust(
            pop, costs, FitConfig("lasso", lam, welfare_weight, optimizer=opt))
    raise InvalidInputError(f"unknown estimator {name!r}")


def _apply_axis(cfg: DgpConfig, axis: str, value: float) -> tuple[DgpConfig, float]:
    """Returns the adjusted DGP and the gaming scale factor for the point."""
    if axis == "global_inverse_gaming":
        if value <= 0:
            raise InvalidInputError("global inverse gaming values must be positive")
        return cfg, 1.0 / value
    if axis == "alpha_22":
        c = np.array(cfg.cost_matrix)
        c[1, 1] = value
        return replace(cfg, cost_matrix=tuple(map(tuple, c))), 1.0
    if axis == "alpha_12":
        c = np.array(cfg.cost_matrix)
        c[0, 1] = c[1, 0] = value
        return replace(cfg, cost_matrix=tuple(map(tuple, c))), 1.0
    if axis == "lambda":
        return cfg, 1.0
    raise InvalidInputError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def comparative_statics_sweep(
    base_cfg: DgpConfig,
    axis: str,
    grid: Sequence[float],
    estimators: Sequence[str],
    lam: float = 0.0,
    welfare_weight: float = 0.0,
) -> list[SweepRow]:
    """Refit each estimator along one comparative-statics axis and score it
    out of sample.

    Each grid point regenerates the world (same seed, adjusted costs or
    gaming scale), fits the estimators on the training draw, then evaluates
    squared error on a fresh draw from the same population, incentivized to
    the fitted rule.
    """
    grid = list(grid)
    if not grid:
        raise InvalidInputError("sweep grid must be nonempty")
    if not estimators:
        raise InvalidInputError("sweep needs at least one estimator")
    rows: list[SweepRow] = []
    for vi, value in enumerate(grid):
        cfg_v, gaming_scale = _apply_axis(base_cfg, axis, float(value))
        lam_v = float(value) if axis == "lambda" else lam
        train = generate_population(cfg_v)
        oos_cfg = replace(cfg_v, seed=derive_seed(cfg_v.seed, 101, vi))
        oos = generate_population(oos_cfg)
        if gaming_scale != 1.0:
            train = train.with_gaming(train.gaming * gaming_scale)
            oos = oos.with_gaming(oos.gaming * gaming_scale)
        costs = cost_model_for(cfg_v)
        for name in estimators:
            report = _estimator_fit(name, train, costs, lam_v, welfare_weight,
                                    seed=derive_seed(cfg_v.seed, 211, vi))
            rule = report.rule
            loss_oos = counterfactual_loss(rule, oos, costs, manipulated=True)
            for ci, coef in enumerate(rule.as_vector()):
                rows.append(SweepRow(axis, float(value), name, ci, float(coef), loss_oos))
    return rows


# ------------------------------------------------------- signal scenario

SIGNAL_DGP = DgpConfig(
    intercept=1.0,
    slopes=(0.10, 0.01),
    bliss_cov=((2.0, 0.5), (0.5, 1.0)),
    cost_matrix=((2.0, 0.5), (0.5, 1.0)),
    gamma_rule={"kind": "signal", "u_coef": 0.1, "floor": 0.1},
    noise_sigma=3.0,
    n_agents=10_000,
    seed=0,
)


@dataclass(frozen=True)
class ScenarioRow:
    label: str
    rule: DecisionRule
    loss_no_manip: float
    loss_manip: float


def manipulation_signal_scenario(seed: int, n_agents: int = 10_000) -> list[ScenarioRow]:
    """One replication of the gaming-signals-the-outcome world: gaming ability
    rises with the unexplained part of the outcome, so manipulation itself
    carries signal and can improve prediction. Reports the true rule, OLS,
    and the strategy-robust fit under both loss columns."""
    cfg = replace(SIGNAL_DGP, seed=seed, n_agents=n_agents)
    pop, costs = generate_world(cfg)
    rows = []
    for label, rule in [
        ("dgp", cfg.true_rule),
        ("ols", fit_ols(pop).rule),
        ("stable", fit_strategy_robust(
            pop, costs,
            FitConfig(optimizer=replace(FitConfig().optimizer, seed=seed))).rule),
    ]:
        rows.append(ScenarioRow(
            label, rule,
            counterfactual_loss(rule, pop, costs, manipulated=False),
            counterfactual_loss(rule, pop, costs, manipulated=True),
        ))
    return rows


# ------------------------------------------------------------- transparency

def transparency_cost(
    pop: Population,
    costs: CostModel,
    naive_rule: DecisionRule,
    robust_rule: DecisionRule,
    realized: Population | None = None,
) -> tuple[float, float]:
    """Upper bounds on the performance cost of disclosing the decision rule.

    predicted = RMSE of the robust rule under model-predicted manipulation
    minus the baseline RMSE of the naive rule on unmanipulated behavior.
    equilibrium uses realized behavior instead of the model's prediction when
    the caller supplies it (a population whose bliss rows are the behaviors
    actually observed under the disclosed rule); absent that, the model's
    best responses stand in. Both are upper bounds because the undisclosed
    rule also faces the threat of manipulation.
    """
    if naive_rule.n_features != robust_rule.n_features:
        raise InvalidInputError("rules must share the feature dimension")
    baseline = np.sqrt(counterfactual_loss(naive_rule, pop, costs, manipulated=False))
    predicted = np.sqrt(expected_counterfactual_loss(robust_rule, pop, costs)) - baseline
    if realized is None:
        implemented = np.sqrt(counterfactual_loss(robust_rule, pop, costs, manipulated=True))
    else:
        implemented = np.sqrt(counterfactual_loss(robust_rule, realized, costs, manipulated=False))
    return float(predicted), float(implemented - baseline)


# -------------------------------------------------------------- table reports

BENCHMARK_DGP = DgpConfig(
    intercept=0.2,
    slopes=(3.0, 0.1, 0.1),
    bliss_cov=((1.0, 1.0, 0.1), (1.0, 2.0, 1.0), (0.1, 1.0, 1.0)),
    cost_matrix=((1.0, 0.1, 0.2), (0.1, 2.0, 0.8), (0.2, 0.8, 4.0)),
    gamma_rule={"kind": "threshold", "feature": 0, "cut": 0.2, "low": 1.0, "high": 10.0},
    noise_sigma=0.5,
    n_agents=10_000,
    seed=0,
)


@dataclass(frozen=True)
class TableRow:
    label: str
    coef_mean: tuple[float, ...]      # intercept first
    coef_sd: tuple[float, ...]
    loss_no_manip_mean: float
    loss_no_manip_sd: float
    loss_manip_mean: float
    loss_manip_sd: float


@dataclass(frozen=True)
class TableReport:
    title: str
    rows: tuple[TableRow, ...]
    n_seeds: int
    n_agents: int

    def row(self, label: str) -> TableRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _aggregate(label: str, cells: list[tuple[np.ndarray, float, float]]) -> TableRow:
    coefs = np.stack([c[0] for c in cells])
    no = np.array([c[1] for c in cells])
    ma = np.array([c[2] for c in cells])
    sd = coefs.std(axis=0, ddof=1) if len(cells) > 1 else np.zeros(coefs.shape[1])
    return TableRow(
        label,
        tuple(float(v) for v in coefs.mean(axis=0)),
        tuple(float(v) for v in sd),
        float(no.mean()), float(no.std(ddof=1)) if len(cells) > 1 else 0.0,
        float(ma.mean()), float(ma.std(ddof=1)) if len(cells) > 1 else 0.0,
    )


def _evaluated(rule: DecisionRule, pop: Population, costs: CostModel):
    return (
        rule.as_vector(),
        counterfactual_loss(rule, pop, costs, manipulated=False),
        counterfactual_loss(rule, pop, costs, manipulated=True),
    )


def benchmark_report(
    cfg: DgpConfig = BENCHMARK_DGP,
    seeds: int = 20,
    base_seed: int = 0,
    rounds: int = 1000,
    checkpoints: Sequence[int] = (1, 2, 3, 100, 1000),
    misspec_scale: float = 2.0,
    warm_rounds: int = 2,
    threads: int = 1,
) -> TableReport:
    """The headline Monte Carlo benchmark: the true payment rule, OLS, the
    cumulative retraining loop at several checkpoints, the strategy-robust
    rule under true and misspecified costs, and the warm-started retraining
    rounds after the misspecified rule. Loss columns are evaluated on the
    same sample of individuals; means and standard deviations pool the
    replications."""
    checkpoints = [c for c in checkpoints if c <= rounds]
    labels = (
        ["dgp", "ols"]
        + [f"ols_r{c}" for c in checkpoints]
        + ["stable", "stable_misspecified"]
        + [f"warm_r{r}" for r in range(1, warm_rounds + 1)]
    )

    def run_one(rep: int) -> dict[str, tuple]:
        seed = derive_seed(base_seed, 1, rep)
        cfg_r = replace(cfg, seed=seed)
        pop, costs = generate_world(cfg_r)
        opt_seed = derive_seed(base_seed, 2, rep)
        cells = {
            "dgp": _evaluated(cfg_r.true_rule, pop, costs),
            "ols": _evaluated(fit_ols(pop).rule, pop, costs),
        }
        loop = run_industry_loop(pop, costs, rounds, "cumulative")
        for c in checkpoints:
            cells[f"ols_r{c}"] = (
                loop.rules[c].as_vector(), loop.losses_no_manip[c], loop.losses_manip[c]
            )
        fit_cfg = FitConfig(optimizer=replace(FitConfig().optimizer, seed=opt_seed))
        cells["stable"] = _evaluated(fit_strategy_robust(pop, costs, fit_cfg).rule, pop, costs)
        believed = misspecify_costs(costs, scale=misspec_scale)
        rule_mis = fit_strategy_robust(pop, believed, fit_cfg).rule
        cells["stable_misspecified"] = _evaluated(rule_mis, pop, costs)
        warm = run_industry_loop(pop, costs, warm_rounds, "cumulative", initial_rule=rule_mis)
        for r in range(1, warm_rounds + 1):
            cells[f"warm_r{r}"] = (
                warm.rules[r].as_vector(), warm.losses_no_manip[r], warm.losses_manip[r]
            )
        return cells

    per_seed = _map_ordered(run_one, range(seeds), threads)
    rows = tuple(_aggregate(lbl, [cells[lbl] for cells in per_seed]) for lbl in labels)
    return TableReport("benchmark", rows, seeds, cfg.n_agents)


def oscillation_report(
    cfg: DgpConfig = BENCHMARK_DGP,
    seeds: int = 20,
    base_seed: int = 0,
    rounds: int = 10,
    threads: int = 1,
) -> TableReport:
    """Last-period-only retraining: the loop alternates between rules that
    put high and low weight on the most manipulable behavior."""
    labels = ["dgp", "ols"] + [f"ols_r{r}" for r in range(1, rounds + 1)]

    def run_one(rep: int) -> dict[str, tuple]:
        cfg_r = replace(cfg, seed=derive_seed(base_seed, 1, rep))
        pop, costs = generate_world(cfg_r)
        cells = {
            "dgp": _evaluated(cfg_r.true_rule, pop, costs),
            "ols": _evaluated(fit_ols(pop).rule, pop, costs),
        }
        loop = run_industry_loop(pop, costs, rounds, "last_period")
        for r in range(1, rounds + 1):
            cells[f"ols_r{r}"] = (
                loop.rules[r].as_vector(), loop.losses_no_manip[r], loop.losses_manip[r]
            )
        return cells

    per_seed = _map_ordered(run_one, range(seeds), threads)
    rows = tuple(_aggregate(lbl, [cells[lbl] for cells in per_seed]) for lbl in labels)
    return TableReport("oscillation", rows, seeds, cfg.n_agents)


def signal_report(
    seeds: int = 200,
    base_seed: int = 0,
    n_agents: int = 10_000,
    threads: int = 1,
) -> TableReport:
    """Replicated manipulation-as-signal scenario with paired seeds."""
    labels = ["dgp", "ols", "stable"]

    def run_one(rep: int) -> dict[str, tuple]:
        rows = manipulation_signal_scenario(derive_seed(base_seed, 1, rep), n_agents)
        return {
            r.label: (r.rule.as_vector(), r.loss_no_manip, r.loss_manip) for r in rows
        }

    per_seed = _map_ordered(run_one, range(seeds), threads)
    rows = tuple(_aggregate(lbl, [cells[lbl] for cells in per_seed]) for lbl in labels)
    return TableReport("signal", rows, seeds, n_agents)


def _map_ordered(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------- report rendering

def table_to_csv_rows(report: TableReport) -> tuple[list[str], list[list[str]]]:
    from .io import fmt

    k = len(report.rows[0].coef_mean) - 1
    header = (
        ["label", "beta0"] + [f"beta_{j + 1}" for j in range(k)]
        + ["loss_no_manip", "loss_no_manip_sd", "loss_manip", "loss_manip_sd"]
    )
    rows = []
    for r in report.rows:
        rows.append(
            [r.label] + [fmt(v) for v in r.coef_mean]
            + [fmt(r.loss_no_manip_mean), fmt(r.loss_no_manip_sd),
               fmt(r.loss_manip_mean), fmt(r.loss_manip_sd)]
        )
    return header, rows


def table_to_markdown(report: TableReport) -> str:
    k = len(report.rows[0].coef_mean) - 1
    head = (
        ["Decision rule", "b0"] + [f"b{j + 1}" for j in range(k)]
        + ["No manip.", "Manipulation"]
    )
    lines = [
        f"### {report.title} ({report.n_seeds} seeds, N={report.n_agents}; means over seeds)",
        "",
        "| " + " | ".join(head) + " |",
        "|" + "|".join(["---"] * len(head)) + "|",
    ]
    for r in report.rows:
        cells = (
            [r.label] + [f"{v:.3f}" for v in r.coef_mean]
            + [f"{r.loss_no_manip_mean:.3f}", f"{r.loss_manip_mean:.3f}"]
        )
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def sweep_to_csv_rows(rows: list[SweepRow]) -> tuple[list[str], list[list[str]]]:
    from .io import fmt

    header = ["axis", "value", "estimator", "coef_index", "coef", "loss_oos"]
    out = [
        [r.axis, fmt(r.value), r.estimator, str(r.coef_index), fmt(r.coef), fmt(r.loss_oos)]
        for r in rows
    ]
    return header, out
