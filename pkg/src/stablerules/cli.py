"""Command-line interface.

Subcommands: simulate (scenario reports), fit (decision rules), estimate-costs
(panel GMM), sweep (comparative statics), evaluate (loss metrics and
transparency bounds), replay (re-run a manifest).

Every run writes a ``manifest.json`` next to its outputs holding the resolved
configuration, the seed, sha256 digests of all inputs, and the output names;
``replay`` re-executes that snapshot and reproduces the outputs byte for
byte. Flags override config-file keys, which override defaults. Exit codes:
0 success, 2 usage or configuration problems, 3 numerical or identification
failures. Progress goes to standard error; data only to files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from . import io as sio
from .errors import (
    ConfigError,
    ConvergenceError,
    IdentificationError,
    InvalidInputError,
    SingularDesignError,
    StableRulesError,
    UnreachableSupportError,
)
from .estimators import (
    FitConfig,
    OptimizerConfig,
    cross_validate_lambda,
    fit_lasso,
    fit_ols,
    fit_ridge,
    fit_strategy_robust,
    fit_strategy_robust_restricted,
    lasso_support_lambda,
)
from .gmm import cv_lambda_costs, fit_primitives
from .model import counterfactual_loss, expected_counterfactual_loss
from .simulation import (
    BENCHMARK_DGP,
    SIGNAL_DGP,
    DgpConfig,
    benchmark_report,
    comparative_statics_sweep,
    oscillation_report,
    signal_report,
    sweep_to_csv_rows,
    table_to_csv_rows,
    table_to_markdown,
)

USAGE_EXIT = 2
NUMERIC_EXIT = 3

_NUMERIC_ERRORS = (
    SingularDesignError,
    ConvergenceError,
    IdentificationError,
    UnreachableSupportError,
    np.linalg.LinAlgError,
)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such file: {p}")
    return p


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    sio.atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def _manifest(subcommand: str, seed, config: dict, inputs: dict[str, str],
              outputs: list[str], threads: int, fmt_: str | None) -> dict:
    return {
        "tool": "stablerules",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "threads": threads,
        "format": fmt_,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }


def _digest_inputs(paths) -> dict[str, str]:
    return {str(Path(p).resolve()): _sha256(_require_file(p)) for p in paths}


def _load_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _bundled_scenario(name: str) -> Path | None:
    from importlib.resources import files

    stem = name[:-5] if name.endswith(".toml") else name
    candidate = files("stablerules").joinpath("scenarios", f"{stem}.toml")
    if candidate.is_file():
        return Path(str(candidate))
    return None


def _resolve_config_path(arg: str) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    bundled = _bundled_scenario(arg)
    if bundled is not None:
        return bundled
    raise ConfigError(f"no such config file or bundled scenario: {arg}")


def _resolve_seed(args_seed, config: dict):
    if args_seed is not None:
        return int(args_seed)
    if "seed" in config:
        return int(config["seed"])
    raise ConfigError("a seed is required: pass --seed or set scenario.seed "
                      "(randomness is never drawn silently)")


def _dgp_from_config(config: dict, default: DgpConfig, n_agents: int | None) -> DgpConfig:
    from dataclasses import replace

    if "dgp" in config:
        d = dict(config["dgp"])
        d.setdefault("seed", 0)
        dgp = DgpConfig.from_dict(d)
    else:
        dgp = default
    if n_agents is not None:
        dgp = replace(dgp, n_agents=int(n_agents))
    return dgp


# ------------------------------------------------------------------ simulate

def _run_simulate(resolved: dict, out_dir: Path) -> list[str]:
    scen = resolved["scenario"]
    kind = scen.get("kind")
    seed = int(scen["seed"])
    seeds = int(scen.get("seeds", 20))
    threads = int(resolved.get("threads", 1))
    fmt_ = resolved.get("format")
    if kind == "benchmark":
        dgp = _dgp_from_config(resolved, BENCHMARK_DGP, scen.get("n_agents"))
        report = benchmark_report(
            dgp, seeds=seeds, base_seed=seed,
            rounds=int(scen.get("rounds", 1000)),
            checkpoints=tuple(scen.get("checkpoints", (1, 2, 3, 100, 1000))),
            misspec_scale=float(scen.get("misspec_scale", 2.0)),
            warm_rounds=int(scen.get("warm_rounds", 2)),
            threads=threads,
        )
    elif kind == "oscillation":
        dgp = _dgp_from_config(resolved, BENCHMARK_DGP, scen.get("n_agents"))
        report = oscillation_report(
            dgp, seeds=seeds, base_seed=seed,
            rounds=int(scen.get("rounds", 10)), threads=threads,
        )
    elif kind == "signal":
        n_agents = int(scen.get("n_agents", SIGNAL_DGP.n_agents))
        report = signal_report(seeds=seeds, base_seed=seed,
                               n_agents=n_agents, threads=threads)
    else:
        raise ConfigError(
            f"unknown scenario kind {kind!r}; expected benchmark, oscillation, or signal"
        )

    outputs = []
    header, rows = table_to_csv_rows(report)
    if fmt_ in (None, "csv"):
        sio.atomic_write_text(out_dir / "table.csv",
                              "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")
        outputs.append("table.csv")
    if fmt_ in (None, "md"):
        sio.atomic_write_text(out_dir / "table.md", table_to_markdown(report))
        outputs.append("table.md")
    if fmt_ == "json":
        payload = {"header": header, "rows": rows}
        sio.atomic_write_text(out_dir / "table.json", json.dumps(payload, indent=2) + "\n")
        outputs.append("table.json")
    return outputs


def cmd_simulate(args) -> int:
    config_path = _resolve_config_path(args.config)
    raw = _load_toml(config_path)
    scen = dict(raw.get("scenario", {}))
    if args.seeds is not None:
        scen["seeds"] = int(args.seeds)
    if args.n_agents is not None:
        scen["n_agents"] = int(args.n_agents)
    if args.rounds is not None:
        scen["rounds"] = int(args.rounds)
    scen["seed"] = _resolve_seed(args.seed, scen)
    resolved = {
        "scenario": scen,
        "threads": args.threads,
        "format": args.format,
    }
    if "dgp" in raw:
        resolved["dgp"] = raw["dgp"]
    inputs = _digest_inputs([config_path])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _progress(f"simulate: kind={scen.get('kind')} seeds={scen.get('seeds', 20)}")
    outputs = _run_simulate(resolved, out_dir)
    _write_manifest(out_dir, _manifest("simulate", scen["seed"], resolved, inputs,
                                       outputs, args.threads, args.format))
    return 0


# ----------------------------------------------------------------------- fit

def _run_fit(resolved: dict, out_dir: Path) -> list[str]:
    pop = sio.load_population(resolved["population"])
    costs = sio.load_cost_model(resolved["costs"])
    estimator = resolved["estimator"]
    seed = int(resolved["seed"])
    folds = int(resolved["folds"])
    support = resolved.get("support")
    welfare = float(resolved.get("welfare_weight", 0.0))
    lam_arg = resolved.get("lambda")

    lam_detail = {}
    if support is not None and estimator in ("lasso", "stable"):
        lam_cv = cross_validate_lambda(pop, "lasso", folds, seed)
        lam_support = lasso_support_lambda(pop, int(support))
        lam = max(lam_cv, lam_support)
        lam_detail = {"lambda_cv": lam_cv, "lambda_support": lam_support}
    elif lam_arg == "cv":
        kind = "ridge" if estimator == "ridge" else "lasso"
        lam = cross_validate_lambda(pop, kind, folds, seed)
        lam_detail = {"lambda_cv": lam}
    else:
        lam = float(lam_arg) if lam_arg is not None else 0.0

    opt = OptimizerConfig(seed=seed, restarts=int(resolved.get("restarts", 5)))
    if estimator == "ols":
        report = fit_ols(pop)
    elif estimator == "ridge":
        report = fit_ridge(pop, lam)
    elif estimator == "lasso":
        report = fit_lasso(pop, lam, opt)
    elif estimator == "stable":
        penalty = resolved.get("penalty") or ("lasso" if support is not None else "none")
        cfg = FitConfig(penalty_kind=penalty if lam > 0 else "none", lam=lam,
                        welfare_weight=welfare,
                        support_limit=int(support) if support is not None else None,
                        optimizer=opt)
        if support is not None:
            report = fit_strategy_robust_restricted(pop, costs, cfg)
        else:
            report = fit_strategy_robust(pop, costs, cfg)
    else:
        raise ConfigError(f"unknown estimator {estimator!r}")

    resolved["lambda_resolved"] = lam
    resolved.update(lam_detail)
    sio.save_rules(out_dir / "rule.csv", [report.rule])
    payload = sio.fit_report_to_dict(report)
    payload.update(lam_detail)
    payload["lambda_resolved"] = lam
    sio.atomic_write_text(out_dir / "fit_report.json", json.dumps(payload, indent=2) + "\n")
    return ["rule.csv", "fit_report.json"]


def cmd_fit(args) -> int:
    resolved = {
        "population": str(_require_file(args.population).resolve()),
        "costs": str(_require_file(args.costs).resolve()),
        "estimator": args.estimator,
        "lambda": args.lam,
        "support": args.support,
        "welfare_weight": args.welfare_weight,
        "penalty": args.penalty,
        "folds": args.folds,
        "restarts": args.restarts,
        "seed": _resolve_seed(args.seed, {}),
    }
    inputs = _digest_inputs([args.population, args.costs])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = _run_fit(resolved, out_dir)
    _write_manifest(out_dir, _manifest("fit", resolved["seed"], resolved, inputs,
                                       outputs, args.threads, None))
    return 0


# ------------------------------------------------------------- estimate-costs

def _run_estimate_costs(resolved: dict, out_dir: Path) -> list[str]:
    panel = sio.load_panel(resolved["panel"], resolved["covariates"])
    seed = int(resolved["seed"])
    if resolved.get("cv"):
        lam_d, lam_o = cv_lambda_costs(panel, folds=int(resolved["folds"]), seed=seed)
        resolved["lambda_diag_resolved"] = lam_d
        resolved["lambda_offdiag_resolved"] = "inf" if np.isinf(lam_o) else lam_o
    else:
        lam_d = float(resolved["lambda_diag"])
        lam_o_raw = resolved["lambda_offdiag"]
        lam_o = np.inf if lam_o_raw == "inf" else float(lam_o_raw)
    fit = fit_primitives(panel, (lam_d, lam_o), shrinkage_phi=float(resolved["phi"]))
    costs = fit.to_cost_model()
    sio.save_cost_model(out_dir / "costs.json", costs)
    k = panel.n_features
    feature_cols = [f"x_{j + 1}" for j in range(k)]
    sio.save_matrix_csv(out_dir / "bliss.csv", "agent_id",
                        [int(a) for a in fit.agent_order], feature_cols, fit.bliss)
    sio.save_matrix_csv(out_dir / "week_effects.csv", "week",
                        [int(w) for w in fit.week_order], feature_cols, fit.week_effects)
    resolved["diagnostics"] = {
        "gmm_loss": fit.gmm_loss,
        "winsorized_fraction": fit.winsorized_fraction,
        "quotient_exclusions": fit.quotient_exclusions,
        "excluded_gaming_agents": fit.excluded_gaming_agents,
    }
    return ["costs.json", "bliss.csv", "week_effects.csv"]


def cmd_estimate_costs(args) -> int:
    resolved = {
        "panel": str(_require_file(args.panel).resolve()),
        "covariates": str(_require_file(args.covariates).resolve()),
        "lambda_diag": args.lambda_diag,
        "lambda_offdiag": args.lambda_offdiag,
        "cv": args.cv,
        "folds": args.folds,
        "phi": args.phi,
        "seed": _resolve_seed(args.seed, {}),
    }
    inputs = _digest_inputs([args.panel, args.covariates])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _progress("estimate-costs: fitting primitives")
    outputs = _run_estimate_costs(resolved, out_dir)
    _write_manifest(out_dir, _manifest("estimate-costs", resolved["seed"], resolved,
                                       inputs, outputs, args.threads, None))
    return 0


# --------------------------------------------------------------------- sweep

def _run_sweep(resolved: dict, out_dir: Path) -> list[str]:
    sweep = resolved["sweep"]
    grid = list(sweep.get("grid", ()))
    if not grid:
        raise ConfigError("sweep.grid must be a nonempty list")
    estimators = list(sweep.get("estimators", ()))
    if not estimators:
        raise ConfigError("sweep.estimators must be a nonempty list")
    dgp = _dgp_from_config(resolved, BENCHMARK_DGP, sweep.get("n_agents"))
    from dataclasses import replace

    dgp = replace(dgp, seed=int(resolved["scenario"]["seed"]))
    rows = comparative_statics_sweep(
        dgp, sweep["axis"], grid, estimators,
        lam=float(sweep.get("lambda", 0.0)),
        welfare_weight=float(sweep.get("welfare_weight", 0.0)),
    )
    header, csv_rows = sweep_to_csv_rows(rows)
    sio.atomic_write_text(out_dir / "sweep.csv",
                          "\n".join([",".join(header)] + [",".join(r) for r in csv_rows]) + "\n")
    return ["sweep.csv"]


def cmd_sweep(args) -> int:
    config_path = _resolve_config_path(args.config)
    raw = _load_toml(config_path)
    if "sweep" not in raw:
        raise ConfigError(f"{config_path}: missing [sweep] section")
    scen = dict(raw.get("scenario", {}))
    scen["seed"] = _resolve_seed(args.seed, scen)
    resolved = {"scenario": scen, "sweep": dict(raw["sweep"])}
    if "dgp" in raw:
        resolved["dgp"] = raw["dgp"]
    inputs = _digest_inputs([config_path])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _progress(f"sweep: axis={resolved['sweep'].get('axis')}")
    outputs = _run_sweep(resolved, out_dir)
    _write_manifest(out_dir, _manifest("sweep", scen["seed"], resolved, inputs,
                                       outputs, args.threads, args.format))
    return 0


# ------------------------------------------------------------------ evaluate

def _run_evaluate(resolved: dict, out_dir: Path) -> list[str]:
    from .model import Population

    rules = sio.load_rules(resolved["rules"])
    pop = sio.load_population(resolved["population"])
    costs = sio.load_cost_model(resolved["costs"])
    # gaming is not part of the population schema; derive each agent's
    # expected ability from the cost model (exp(-omega z) plus the mean shock)
    gamma = costs.gamma_base(pop.observables) + float(np.mean(costs.gaming_shocks))
    pop = Population(pop.bliss, pop.outcomes, gamma, pop.observables,
                     pop.feature_names, pop.agent_ids)
    manipulated = bool(resolved.get("manipulated"))
    welfare = float(resolved.get("welfare_weight", 0.0))
    metrics: dict = {"manipulated": manipulated, "rules": {}}
    for rule in rules:
        if manipulated:
            loss = expected_counterfactual_loss(rule, pop, costs, welfare)
        else:
            loss = counterfactual_loss(rule, pop, costs, False, welfare)
        metrics["rules"][rule.label] = {"loss": loss, "rmse": float(np.sqrt(max(loss, 0.0)))}
    if resolved.get("naive_rules"):
        from .simulation import transparency_cost

        naive = sio.load_rules(resolved["naive_rules"])[0]
        robust = rules[0]
        predicted, equilibrium = transparency_cost(pop, costs, naive, robust)
        metrics["transparency"] = {
            "naive": naive.label,
            "robust": robust.label,
            "predicted_bound": predicted,
            "equilibrium_bound": equilibrium,
        }
    sio.atomic_write_text(out_dir / "metrics.json", json.dumps(metrics, indent=2) + "\n")
    return ["metrics.json"]


def cmd_evaluate(args) -> int:
    resolved = {
        "rules": str(_require_file(args.rules).resolve()),
        "population": str(_require_file(args.population).resolve()),
        "costs": str(_require_file(args.costs).resolve()),
        "manipulated": args.manipulated,
        "welfare_weight": args.welfare_weight,
        "naive_rules": str(_require_file(args.transparency).resolve()) if args.transparency else None,
    }
    input_paths = [args.rules, args.population, args.costs]
    if args.transparency:
        input_paths.append(args.transparency)
    inputs = _digest_inputs(input_paths)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = _run_evaluate(resolved, out_dir)
    _write_manifest(out_dir, _manifest("evaluate", None, resolved, inputs,
                                       outputs, args.threads, None))
    return 0


# -------------------------------------------------------------------- replay

_RUNNERS = {
    "simulate": _run_simulate,
    "fit": _run_fit,
    "estimate-costs": _run_estimate_costs,
    "sweep": _run_sweep,
    "evaluate": _run_evaluate,
}


def cmd_replay(args) -> int:
    manifest_path = _require_file(args.manifest)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    sub = manifest.get("subcommand")
    if sub not in _RUNNERS:
        raise ConfigError(f"manifest subcommand {sub!r} is not replayable")
    for path, digest in manifest.get("inputs", {}).items():
        if _sha256(_require_file(path)) != digest:
            raise ConfigError(f"input changed since the original run: {path}")
    out_dir = manifest_path.parent
    _progress(f"replay: {sub} -> {out_dir}")
    outputs = _RUNNERS[sub](dict(manifest["config"]), out_dir)
    _write_manifest(out_dir, {**manifest, "outputs": outputs})
    return 0


# ---------------------------------------------------------------------- main

def _add_common(p: argparse.ArgumentParser, with_format: bool = False) -> None:
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=None, help="base seed for all randomness")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallelism cap; results do not depend on it")
    if with_format:
        p.add_argument("--format", choices=("csv", "md", "json"), default=None,
                       help="report format (default: csv and md)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stablerules",
        description="Strategy-robust decision rules under costly behavior manipulation",
    )
    parser.add_argument("--version", action="version", version=f"stablerules {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario config and emit report tables")
    p.add_argument("config", help="scenario TOML path or bundled scenario name")
    p.add_argument("--seeds", type=int, default=None, help="replication count override")
    p.add_argument("--n-agents", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    _add_common(p, with_format=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a decision rule to a population")
    p.add_argument("population", help="population CSV")
    p.add_argument("costs", help="cost-model JSON")
    p.add_argument("--estimator", required=True, choices=("ols", "ridge", "lasso", "stable"))
    p.add_argument("--lambda", dest="lam", default=None,
                   help="penalty value, or 'cv' to cross-validate")
    p.add_argument("--penalty", choices=("none", "lasso", "ridge"), default=None,
                   help="penalty kind for the stable estimator")
    p.add_argument("--support", type=int, default=None,
                   help="restrict to this many features (lasso/stable)")
    p.add_argument("--welfare-weight", type=float, default=0.0)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--restarts", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate-costs", help="estimate cost primitives from a panel")
    p.add_argument("panel", help="panel CSV (long format)")
    p.add_argument("covariates", help="covariates CSV")
    p.add_argument("--lambda-diag", default=0.0)
    p.add_argument("--lambda-offdiag", default=0.0, help="value or 'inf'")
    p.add_argument("--cv", action="store_true", help="cross-validate the penalty pair")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--phi", type=float, default=0.005, help="gaming-shock shrinkage factor")
    _add_common(p)
    p.set_defaults(func=cmd_estimate_costs)

    p = sub.add_parser("sweep", help="comparative-statics sweep to a tidy CSV")
    p.add_argument("config", help="sweep TOML path or bundled scenario name")
    _add_common(p, with_format=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="evaluate rules on a population")
    p.add_argument("rules", help="decision-rule CSV")
    p.add_argument("population", help="population CSV")
    p.add_argument("costs", help="cost-model JSON")
    p.add_argument("--manipulated", action="store_true",
                   help="evaluate under model-predicted manipulation")
    p.add_argument("--welfare-weight", type=float, default=0.0)
    p.add_argument("--transparency", default=None,
                   help="naive-rule CSV; adds transparency-cost bounds")
    p.add_argument("--out", default=".")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="re-run a manifest and reproduce its outputs")
    p.add_argument("manifest", help="path to a manifest.json")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"stablerules: error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except (ConfigError, InvalidInputError, FileNotFoundError) as exc:
        print(f"stablerules: error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except StableRulesError as exc:
        print(f"stablerules: error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
