"""The behavioral game: agent types, quadratic manipulation costs, linear
decision rules, best responses, and counterfactual loss.

Conventions used throughout the package:

* A decision rule scores behavior x as  yhat = intercept + coefficients @ x.
* An agent facing rule beta shifts behavior from its bliss level to
  x* = bliss + gaming * (inv_cost @ beta), paying 0.5 * gaming *
  beta' inv_cost beta for the shift.
* Per-agent gaming ability decomposes as gamma_i = exp(-omega @ z_i) + v,
  with v drawn from the empirical shock set stored on the cost model.

Everything in this module is a pure function of immutable values; all arrays
are defensively copied and marked read-only at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError

_SYMMETRY_REJECT = 1e-8
_GAMMA_LOG_FLOOR = 1e-300  # gaming of 0 encodes as z = -log(floor), exp underflows back to 0


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{what} must be finite")


@dataclass(frozen=True)
class DecisionRule:
    """A linear scoring rule: intercept plus one coefficient per behavior."""

    intercept: float
    coefficients: np.ndarray
    label: str = ""

    def __post_init__(self):
        coef = _readonly(np.atleast_1d(self.coefficients))
        if coef.ndim != 1:
            raise InvalidInputError("coefficients must be a vector")
        _require_finite(coef, "rule coefficients")
        if not np.isfinite(self.intercept):
            raise InvalidInputError("rule intercept must be finite")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0]

    def as_vector(self) -> np.ndarray:
        """(intercept, coefficients) stacked into one array."""
        return np.concatenate(([self.intercept], self.coefficients))

    @staticmethod
    def from_vector(v: np.ndarray, label: str = "") -> "DecisionRule":
        v = np.asarray(v, dtype=float)
        return DecisionRule(float(v[0]), v[1:], label=label)


@dataclass(frozen=True)
class CostModel:
    """Manipulation-cost primitives shared by a population.

    ``inv_cost`` is the symmetric base inverse-cost matrix (behavior shift per
    unit of incentive at gaming 1). ``omega`` loads observables into the
    deterministic part of gaming ability, exp(-omega @ z). ``gaming_shocks``
    is the empirical set of unobserved gaming shocks v. The cost-units view
    (the matrix of alpha_jk) is derived on demand and only defined when
    inv_cost is invertible.

    Construction symmetrizes inv_cost as (M + M') / 2 and rejects inputs
    whose asymmetry exceeds 1e-8; diagonal entries must be positive.
    Mean-zero-ness of the shocks is a property of how they were produced
    (they are shrunk/winsorized downstream) and is not enforced here.
    """

    inv_cost: np.ndarray
    omega: np.ndarray
    gaming_shocks: np.ndarray = field(default_factory=lambda: np.zeros(1))
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        m = np.array(self.inv_cost, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError("inv_cost must be a square matrix")
        _require_finite(m, "inv_cost")
        asym = np.max(np.abs(m - m.T)) if m.size else 0.0
        if asym > _SYMMETRY_REJECT:
            raise InvalidInputError(
                f"inv_cost asymmetry {asym:g} exceeds {_SYMMETRY_REJECT:g}; "
                "cost matrices are quadratic forms"
            )
        m = (m + m.T) / 2.0
        if np.any(np.diag(m) <= 0):
            raise InvalidInputError("inv_cost diagonal entries must be positive")
        omega = _readonly(np.atleast_1d(self.omega))
        _require_finite(omega, "omega")
        shocks = _readonly(np.atleast_1d(self.gaming_shocks))
        _require_finite(shocks, "gaming_shocks")
        if shocks.size == 0:
            raise InvalidInputError("gaming_shocks must be nonempty")
        object.__setattr__(self, "inv_cost", _readonly(m))
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "gaming_shocks", shocks)
        if self.feature_names is not None:
            names = tuple(str(n) for n in self.feature_names)
            if len(names) != m.shape[0]:
                raise DimensionMismatchError("feature_names length must match inv_cost")
            object.__setattr__(self, "feature_names", names)

    @property
    def n_features(self) -> int:
        return self.inv_cost.shape[0]

    @property
    def cost_view(self) -> np.ndarray:
        """The cost-units matrix (inverse of inv_cost). Raises when singular."""
        try:
            return np.linalg.inv(self.inv_cost)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("cost view undefined: inv_cost is singular") from exc

    def gamma_base(self, observables: np.ndarray) -> np.ndarray:
        """Deterministic gaming component exp(-omega @ z) for one or many agents."""
        z = np.asarray(observables, dtype=float)
        if z.ndim == 1:
            if z.shape[0] != self.omega.shape[0]:
                raise DimensionMismatchError("observables length must match omega")
            return float(np.exp(-z @ self.omega))
        if z.shape[1] != self.omega.shape[0]:
            raise DimensionMismatchError("observables width must match omega")
        return np.exp(-z @ self.omega)

    def shock_moments(self) -> tuple[float, float]:
        """First two raw moments of the gaming-shock set."""
        v = self.gaming_shocks
        return float(np.mean(v)), float(np.mean(v * v))

    def response_direction(self, rule: DecisionRule) -> np.ndarray:
        """inv_cost @ beta: the behavior shift per unit of gaming ability."""
        if rule.n_features != self.n_features:
            raise DimensionMismatchError("rule and cost model dimensions differ")
        return self.inv_cost @ rule.coefficients


@dataclass(frozen=True)
class Agent:
    """One individual: bliss behavior, gaming ability, observables, outcome.

    gaming is clamped at zero from below; negative gaming ability is
    meaningless.
    """

    bliss: np.ndarray
    gaming: float = 0.0
    observables: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outcome: float = 0.0

    def __post_init__(self):
        bliss = _readonly(np.atleast_1d(self.bliss))
        _require_finite(bliss, "bliss")
        obs = _readonly(np.atleast_1d(self.observables) if np.ndim(self.observables) else [self.observables])
        object.__setattr__(self, "bliss", bliss)
        object.__setattr__(self, "observables", obs)
        object.__setattr__(self, "gaming", max(0.0, float(self.gaming)))
        object.__setattr__(self, "outcome", float(self.outcome))


class Population:
    """A fixed roster of agents sharing a feature space.

    Backed by arrays (one row per agent) for vectorized work; ``agents``
    materializes the row view on demand.
    """

    def __init__(
        self,
        bliss: np.ndarray,
        outcomes: np.ndarray,
        gaming: np.ndarray | None = None,
        observables: np.ndarray | None = None,
        feature_names: Sequence[str] | None = None,
        agent_ids: Sequence[int] | None = None,
    ):
        bliss = np.atleast_2d(np.asarray(bliss, dtype=float))
        n, k = bliss.shape
        outcomes = np.asarray(outcomes, dtype=float).reshape(-1)
        if outcomes.shape[0] != n:
            raise DimensionMismatchError("outcomes length must match bliss rows")
        if gaming is None:
            gaming = np.zeros(n)
        gaming = np.asarray(gaming, dtype=float).reshape(-1)
        if gaming.shape[0] != n:
            raise DimensionMismatchError("gaming length must match bliss rows")
        if np.any(gaming < 0):
            gaming = np.maximum(gaming, 0.0)
        if observables is None:
            observables = np.zeros((n, 0))
        observables = np.asarray(observables, dtype=float)
        if observables.ndim == 1:
            observables = observables[:, None]
        if observables.shape[0] != n:
            raise DimensionMismatchError("observables rows must match bliss rows")
        _require_finite(bliss, "bliss")
        _require_finite(outcomes, "outcomes")
        if feature_names is None:
            feature_names = tuple(f"x_{j + 1}" for j in range(k))
        feature_names = tuple(str(s) for s in feature_names)
        if len(feature_names) != k:
            raise DimensionMismatchError("feature_names length must match feature count")
        if agent_ids is None:
            agent_ids = np.arange(n)
        agent_ids = np.asarray(agent_ids)
        if agent_ids.shape[0] != n:
            raise DimensionMismatchError("agent_ids length must match bliss rows")

        self.bliss = _readonly(bliss)
        self.outcomes = _readonly(outcomes)
        self.gaming = _readonly(gaming)
        self.observables = _readonly(observables)
        self.feature_names = feature_names
        self.agent_ids = agent_ids.copy()
        self.agent_ids.flags.writeable = False

    @classmethod
    def from_agents(cls, agents: Iterable[Agent], feature_names: Sequence[str] | None = None) -> "Population":
        agents = list(agents)
        if not agents:
            raise InvalidInputError("population must contain at least one agent")
        k = agents[0].bliss.shape[0]
        if any(a.bliss.shape[0] != k for a in agents):
            raise DimensionMismatchError("all agents must share the feature dimension")
        return cls(
            bliss=np.stack([a.bliss for a in agents]),
            outcomes=np.array([a.outcome for a in agents]),
            gaming=np.array([a.gaming for a in agents]),
            observables=np.stack([a.observables for a in agents]),
            feature_names=feature_names,
        )

    @property
    def n_agents(self) -> int:
        return self.bliss.shape[0]

    @property
    def n_features(self) -> int:
        return self.bliss.shape[1]

    @property
    def agents(self) -> tuple[Agent, ...]:
        return tuple(
            Agent(self.bliss[i], self.gaming[i], self.observables[i], self.outcomes[i])
            for i in range(self.n_agents)
        )

    def with_gaming(self, gaming: np.ndarray) -> "Population":
        """Copy of the population with replaced gaming abilities (z re-encoded)."""
        gaming = np.asarray(gaming, dtype=float)
        return Population(
            self.bliss, self.outcomes, gaming,
            encode_gaming_observable(gaming),
            self.feature_names, self.agent_ids,
        )

    def restrict_features(self, indices: Sequence[int]) -> "Population":
        idx = list(indices)
        return Population(
            self.bliss[:, idx], self.outcomes, self.gaming, self.observables,
            [self.feature_names[j] for j in idx], self.agent_ids,
        )


def encode_gaming_observable(gaming: np.ndarray) -> np.ndarray:
    """Encode known per-agent gaming as a single observable z = -log(gamma).

    Paired with omega = [1.0] and gaming_shocks = {0}, the cost model then
    reproduces each agent's gaming exactly: exp(-z) = gamma. Zero gaming maps
    to a huge z whose exponential underflows back to exactly 0.
    """
    g = np.maximum(np.asarray(gaming, dtype=float), _GAMMA_LOG_FLOOR)
    return (-np.log(g))[:, None]


def _check_rule_pop(rule: DecisionRule, pop: Population) -> None:
    if rule.n_features != pop.n_features:
        raise DimensionMismatchError(
            f"rule has {rule.n_features} coefficients, population has {pop.n_features} features"
        )


def predict(rule: DecisionRule, x: np.ndarray) -> float | np.ndarray:
    """Score behavior under the rule: intercept + coefficients @ x.

    Accepts a single behavior vector or a (N, K) matrix of rows.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != rule.n_features:
            raise DimensionMismatchError("behavior vector length must match rule")
        return float(rule.intercept + rule.coefficients @ x)
    if x.shape[1] != rule.n_features:
        raise DimensionMismatchError("behavior matrix width must match rule")
    return rule.intercept + x @ rule.coefficients


def best_response(agent: Agent, rule: DecisionRule, costs: CostModel) -> np.ndarray:
    """Behavior the agent optimally shifts to when facing the rule.

    x* = bliss + gaming * inv_cost @ beta. With beta = 0 or gaming = 0 the
    bliss behavior is returned bit-exactly.
    """
    if agent.bliss.shape[0] != rule.n_features:
        raise DimensionMismatchError("agent and rule dimensions differ")
    s = costs.response_direction(rule)
    if agent.gaming == 0.0 or not np.any(rule.coefficients):
        return agent.bliss.copy()
    return agent.bliss + agent.gaming * s


def best_response_matrix(pop: Population, rule: DecisionRule, costs: CostModel) -> np.ndarray:
    """Stacked best responses, one row per agent."""
    _check_rule_pop(rule, pop)
    s = costs.response_direction(rule)
    return pop.bliss + pop.gaming[:, None] * s[None, :]


def manipulation_cost_at_best_response(agent: Agent, rule: DecisionRule, costs: CostModel) -> float:
    """Quadratic cost the agent pays at its best response: 0.5 * gamma * beta' inv_cost beta.

    Uses the closed form, so it is defined even when inv_cost is singular
    (infinite-cost directions are never entered by the best response).
    """
    if agent.bliss.shape[0] != rule.n_features:
        raise DimensionMismatchError("agent and rule dimensions differ")
    q = float(rule.coefficients @ costs.response_direction(rule))
    return 0.5 * agent.gaming * q


def agent_utility(agent: Agent, rule: DecisionRule, costs: CostModel) -> float:
    """Score received at the best response minus the manipulation cost paid."""
    x_star = best_response(agent, rule, costs)
    return float(predict(rule, x_star)) - manipulation_cost_at_best_response(agent, rule, costs)


def mean_manipulation_cost(rule: DecisionRule, pop: Population, costs: CostModel) -> float:
    """Average manipulation cost across the population at best response."""
    _check_rule_pop(rule, pop)
    q = float(rule.coefficients @ costs.response_direction(rule))
    return 0.5 * float(np.mean(pop.gaming)) * q


def counterfactual_loss(
    rule: DecisionRule,
    pop: Population,
    costs: CostModel,
    manipulated: bool,
    welfare_weight: float = 0.0,
) -> float:
    """Mean squared prediction error, optionally at manipulated behavior.

    With ``manipulated`` off, behavior is each agent's bliss level (the
    "no manipulation" table column); with it on, each agent best-responds to
    the rule itself (the "manipulation" column). ``welfare_weight`` adds
    weight times the mean manipulation cost.
    """
    _check_rule_pop(rule, pop)
    if welfare_weight < 0:
        raise InvalidInputError("welfare_weight must be nonnegative")
    x = best_response_matrix(pop, rule, costs) if manipulated else pop.bliss
    resid = pop.outcomes - predict(rule, x)
    loss = float(np.mean(resid * resid))
    if welfare_weight > 0.0:
        loss += welfare_weight * mean_manipulation_cost(rule, pop, costs)
    return loss


def expected_counterfactual_loss(
    rule: DecisionRule,
    pop: Population,
    costs: CostModel,
    welfare_weight: float = 0.0,
) -> float:
    """Counterfactual loss under model-predicted manipulation.

    Gaming ability is not read off the agents; it is predicted from the cost
    model as gamma_i(v) = exp(-omega @ z_i) + v and the squared error is
    averaged over every shock v in the empirical set (deterministic full
    enumeration). Because the residual is linear in gamma, the enumeration
    reduces exactly to the first two moments of the shock set.
    """
    _check_rule_pop(rule, pop)
    s = costs.response_direction(rule)
    q = float(rule.coefficients @ s)
    gb = costs.gamma_base(pop.observables)
    m1, m2 = costs.shock_moments()
    gbar = gb + m1                      # E_v[gamma_i(v)]
    g2 = gb * gb + 2.0 * gb * m1 + m2   # E_v[gamma_i(v)^2]
    r0 = pop.outcomes - rule.intercept - pop.bliss @ rule.coefficients
    loss = float(np.mean(r0 * r0 - 2.0 * q * r0 * gbar + q * q * g2))
    if welfare_weight > 0.0:
        loss += welfare_weight * 0.5 * q * float(np.mean(gbar))
    return loss


def rmse(rule: DecisionRule, pop: Population, costs: CostModel, manipulated: bool) -> float:
    """Root of the counterfactual loss with no welfare term."""
    return float(np.sqrt(counterfactual_loss(rule, pop, costs, manipulated)))
