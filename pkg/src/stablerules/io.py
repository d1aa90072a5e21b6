"""File formats: population CSV, cost-model JSON, decision-rule CSV, panel CSV.

All floats are written with ``repr`` (shortest round-tripping form, at most 17
significant digits), so every schema round-trips losslessly and byte-stably.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .model import CostModel, DecisionRule, Population


def fmt(x) -> str:
    """Shortest exact decimal form of a float."""
    return repr(float(x))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write a file via a same-directory temp file and rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: str | Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- population

def save_population(path: str | Path, pop: Population) -> None:
    """Write the ``agent_id,y,z_1..z_P,x_1..x_K`` schema.

    Gaming abilities are not part of the schema; they are recoverable from a
    cost model via exp(-omega @ z) when z encodes them.
    """
    p = pop.observables.shape[1]
    header = ["agent_id", "y"] + [f"z_{j + 1}" for j in range(p)] + list(pop.feature_names)
    rows = (
        [str(int(pop.agent_ids[i])), fmt(pop.outcomes[i])]
        + [fmt(v) for v in pop.observables[i]]
        + [fmt(v) for v in pop.bliss[i]]
        for i in range(pop.n_agents)
    )
    _write_csv(path, header, rows)


def load_population(path: str | Path, default_gaming: float = 0.0) -> Population:
    """Read the population schema. Feature names are taken from the header.

    Columns after ``agent_id,y`` that are named ``z_1..z_P`` are covariates;
    the rest are behaviors. Agents get ``default_gaming`` since gaming is not
    part of the schema.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["agent_id", "y"]:
            raise InvalidInputError(f"{path}: expected header starting agent_id,y")
        rest = header[2:]
        p = 0
        while p < len(rest) and rest[p] == f"z_{p + 1}":
            p += 1
        feature_names = rest[p:]
        if not feature_names:
            raise InvalidInputError(f"{path}: no behavior columns found")
        ids, ys, zs, xs = [], [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(int(row[0]))
            ys.append(float(row[1]))
            zs.append([float(v) for v in row[2:2 + p]])
            xs.append([float(v) for v in row[2 + p:]])
    n = len(ids)
    return Population(
        bliss=np.array(xs),
        outcomes=np.array(ys),
        gaming=np.full(n, default_gaming),
        observables=np.array(zs).reshape(n, p),
        feature_names=feature_names,
        agent_ids=np.array(ids),
    )


# ---------------------------------------------------------------- cost model

def cost_model_to_dict(costs: CostModel) -> dict:
    return {
        "inv_cost": [[float(v) for v in row] for row in costs.inv_cost],
        "omega": [float(v) for v in costs.omega],
        "gaming_shocks": [float(v) for v in costs.gaming_shocks],
        "feature_names": list(costs.feature_names) if costs.feature_names else None,
    }


def save_cost_model(path: str | Path, costs: CostModel) -> None:
    atomic_write_text(path, json.dumps(cost_model_to_dict(costs), indent=2) + "\n")


def load_cost_model(path: str | Path) -> CostModel:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return CostModel(
            inv_cost=np.array(data["inv_cost"], dtype=float),
            omega=np.array(data["omega"], dtype=float),
            gaming_shocks=np.array(data["gaming_shocks"], dtype=float),
            feature_names=data.get("feature_names"),
        )
    except KeyError as exc:
        raise InvalidInputError(f"{path}: missing cost-model key {exc}") from exc


# ------------------------------------------------------------- decision rules

def save_rules(path: str | Path, rules: Sequence[DecisionRule]) -> None:
    """Write the ``name,beta0,beta_1..beta_K`` schema, one row per rule."""
    rules = list(rules)
    if not rules:
        raise InvalidInputError("no rules to save")
    k = rules[0].n_features
    if any(r.n_features != k for r in rules):
        raise InvalidInputError("all rules in one file must share the dimension")
    header = ["name", "beta0"] + [f"beta_{j + 1}" for j in range(k)]
    rows = (
        [r.label or f"rule_{i}", fmt(r.intercept)] + [fmt(v) for v in r.coefficients]
        for i, r in enumerate(rules)
    )
    _write_csv(path, header, rows)


def load_rules(path: str | Path) -> list[DecisionRule]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["name", "beta0"]:
            raise InvalidInputError(f"{path}: expected header starting name,beta0")
        out = []
        for row in reader:
            if not row:
                continue
            out.append(DecisionRule(float(row[1]), np.array([float(v) for v in row[2:]]), label=row[0]))
    if not out:
        raise InvalidInputError(f"{path}: no rules found")
    return out


# ---------------------------------------------------------------- fit report

def fit_report_to_dict(report) -> dict:
    d = {
        "rule": {
            "label": report.rule.label,
            "beta0": float(report.rule.intercept),
            "coefficients": [float(v) for v in report.rule.coefficients],
        },
        "in_sample_loss": float(report.in_sample_loss),
        "converged": bool(report.converged),
        "iterations_used": int(report.iterations_used),
        "objective_value": float(report.objective_value),
    }
    if report.config is not None:
        cfg = report.config
        d["config"] = {
            "penalty_kind": cfg.penalty_kind,
            "lam": float(cfg.lam),
            "welfare_weight": float(cfg.welfare_weight),
            "support_limit": cfg.support_limit,
            "optimizer": {
                "max_iterations": cfg.optimizer.max_iterations,
                "gradient_tolerance": float(cfg.optimizer.gradient_tolerance),
                "restarts": cfg.optimizer.restarts,
                "seed": cfg.optimizer.seed,
            },
        }
    return d


def save_fit_report(path: str | Path, report) -> None:
    atomic_write_text(path, json.dumps(fit_report_to_dict(report), indent=2) + "\n")


# -------------------------------------------------------------------- panels

def save_panel(path: str | Path, panel) -> None:
    """Write the long-format ``agent_id,week,opted_in,beta_1..beta_K,x_1..x_K`` schema."""
    k = panel.n_features
    header = (
        ["agent_id", "week", "opted_in"]
        + [f"beta_{j + 1}" for j in range(k)]
        + [f"x_{j + 1}" for j in range(k)]
    )
    rows = (
        [str(int(panel.agent_ids[r])), str(int(panel.weeks[r])), str(int(panel.opted_in[r]))]
        + [fmt(v) for v in panel.incentives[r]]
        + [fmt(v) for v in panel.behaviors[r]]
        for r in range(panel.n_rows)
    )
    _write_csv(path, header, rows)


def load_panel(path: str | Path, covariates_path: str | Path):
    """Read a panel CSV plus its ``agent_id,z_1..z_P`` covariates CSV."""
    from .gmm import PanelDataset  # local import to avoid a cycle

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["agent_id", "week", "opted_in"]:
            raise InvalidInputError(f"{path}: expected header starting agent_id,week,opted_in")
        beta_cols = [c for c in header if c.startswith("beta_")]
        k = len(beta_cols)
        if len(header) != 3 + 2 * k:
            raise InvalidInputError(f"{path}: expected {k} beta and {k} x columns")
        ids, weeks, opted, betas, xs = [], [], [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(int(row[0]))
            weeks.append(int(row[1]))
            opted.append(bool(int(row[2])))
            betas.append([float(v) for v in row[3:3 + k]])
            xs.append([float(v) for v in row[3 + k:]])

    with open(covariates_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "agent_id":
            raise InvalidInputError(f"{covariates_path}: expected header starting agent_id")
        cov_ids, zs = [], []
        for row in reader:
            if not row:
                continue
            cov_ids.append(int(row[0]))
            zs.append([float(v) for v in row[1:]])

    return PanelDataset(
        agent_ids=np.array(ids),
        weeks=np.array(weeks),
        behaviors=np.array(xs),
        incentives=np.array(betas),
        opted_in=np.array(opted, dtype=bool),
        covariate_agent_ids=np.array(cov_ids),
        covariates=np.array(zs).reshape(len(cov_ids), -1),
    )


def save_covariates(path: str | Path, agent_ids: np.ndarray, covariates: np.ndarray) -> None:
    p = covariates.shape[1]
    header = ["agent_id"] + [f"z_{j + 1}" for j in range(p)]
    rows = (
        [str(int(agent_ids[i]))] + [fmt(v) for v in covariates[i]]
        for i in range(len(agent_ids))
    )
    _write_csv(path, header, rows)


def save_matrix_csv(path: str | Path, row_label: str, row_ids, col_names, matrix) -> None:
    """Generic labelled-matrix CSV (used for bliss and week-effect tables)."""
    header = [row_label] + list(col_names)
    rows = (
        [str(rid)] + [fmt(v) for v in matrix[i]]
        for i, rid in enumerate(row_ids)
    )
    _write_csv(path, header, rows)
