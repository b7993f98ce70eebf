"""One handler per CLI subcommand; each writes its artifacts through the store"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
from pydantic import ValidationError

from ..config.settings import settings
from ..database.artifacts import ArtifactStore, read_json
from ..models.cones import Cone, cone_from_spec
from ..models.market import LevyModel, model_from_spec
from ..models.schemas import RunConfig
from ..services.opportunity import grid_to_rows, solve_opportunity, solve_unconstrained, adjustment
from ..services.oracle import compare_to_ode, convergence_table, discretize, dp_backward, reference_steps, tree_to_rows
from ..services.simulate import (
    BaseSolution,
    efficient_frontier,
    frontier_rows,
    markowitz_from_base,
    path_summary_rows,
    sample_paths,
    simulate_terminal,
    simulate_wealth_batch,
)
from ..utils.exceptions import ConfigError
from ..utils.helpers import mean_and_stderr, sample_variance

logger = logging.getLogger(__name__)

OPTION_FIELDS = ("n_steps", "scheme", "mc_paths", "seed", "gamma", "m", "x", "m_grid", "gauss_points", "ode_steps", "n_list")


@dataclass
class RunContext:
    model: LevyModel
    cone: Cone
    options: Dict[str, Any]
    store: ArtifactStore
    inputs: Dict[str, Any]


def load_run_config(path: str) -> RunConfig:
    """Read and validate a run document"""
    raw = read_json(path)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(part) for part in err["loc"])
        raise ConfigError(err["msg"], field=field) from e


def resolve_options(config: RunConfig, flags: Dict[str, Any]) -> Dict[str, Any]:
    """An explicitly passed flag wins over the config file, which wins over settings"""
    options: Dict[str, Any] = dict(settings.solver_defaults())
    for name in OPTION_FIELDS:
        options.setdefault(name, None)
    for name, value in config.options.model_dump().items():
        if value is not None:
            options[name] = value
    for name, value in flags.items():
        if value is not None:
            options[name] = value
    return options


def build_context(config_path: str, command: str, flags: Dict[str, Any], out: Optional[str]) -> RunContext:
    config = load_run_config(config_path)
    if config.problem is not None and config.problem != command:
        raise ConfigError(f"config is for '{config.problem}', not '{command}'", field="problem")

    if isinstance(config.model, str):
        model_path = Path(config_path).parent / config.model
        model = model_from_spec(read_json(str(model_path)))
    else:
        model = model_from_spec(config.model)
    cone = cone_from_spec(config.cone, dim=model.dim)
    options = resolve_options(config, flags)

    out_dir = out or config.out or settings.OUTPUT_DIR
    inputs = {
        "config": str(config_path),
        "model": model.to_spec(),
        "cone": config.cone.model_dump(),
    }
    logger.info(f"Running '{command}' with config {config_path}, output to {out_dir}")
    return RunContext(model=model, cone=cone, options=options, store=ArtifactStore(out_dir), inputs=inputs)


def _solve_base(ctx: RunContext) -> BaseSolution:
    opts = ctx.options
    grid, policy = solve_opportunity(ctx.model, ctx.cone, opts["n_steps"], opts["scheme"])
    return BaseSolution(model=ctx.model, grid=grid, policy=policy)


def _write_opportunity(ctx: RunContext, grid, policy) -> None:
    header, rows = grid_to_rows(grid, policy)
    ctx.store.write_csv("opportunity.csv", header, rows)
    ctx.store.write_csv("plot_l_plus.csv", ["t", "L_plus"], [[r[0], r[1]] for r in rows])
    ctx.store.write_csv("plot_l_minus.csv", ["t", "L_minus"], [[r[0], r[2]] for r in rows])


def run_solve(ctx: RunContext) -> None:
    base = _solve_base(ctx)
    _write_opportunity(ctx, base.grid, base.policy)


def run_unconstrained(ctx: RunContext) -> None:
    opts = ctx.options
    grid, policy = solve_unconstrained(ctx.model, opts["n_steps"], opts["scheme"])
    _write_opportunity(ctx, grid, policy)
    a, kappa = adjustment(ctx.model)
    ctx.store.write_json("adjustment.json", {
        "a": [float(v) for v in a],
        "kappa": kappa,
        "L0": float(grid.l_plus[0]),
    })


def run_simulate(ctx: RunContext) -> None:
    opts = ctx.options
    base = _solve_base(ctx)
    n_paths, seed = opts["mc_paths"], opts["seed"]
    x = float(opts["x"])
    summary: Dict[str, Any] = {"x": x, "n_paths": n_paths}

    first_index, shift = 0, 0.0
    if opts["m"] is not None or opts["gamma"] is not None:
        solution = markowitz_from_base(base, x, m=opts["m"], gamma=opts["gamma"], mc_paths=n_paths, seed=seed)
        # evaluation paths follow the ones used for e_hat
        first_index, shift = n_paths, solution.tilde_m
        summary.update({"e_hat": solution.e_hat, "e_hat_stderr": solution.e_hat_stderr,
                        "scale": solution.scale, "tilde_m": solution.tilde_m})

    # the Markowitz wealth is tilde_m plus the base wealth started at x - tilde_m
    shifted = simulate_terminal(x - shift, base.policy, ctx.model, n_paths, seed,
                                first_index=first_index, grid=base.grid)
    wealth = replace(shifted, terminal=shifted.terminal + shift)

    mean, stderr = mean_and_stderr(wealth.terminal)
    summary.update({
        "mean_V_T": mean,
        "stderr_V_T": stderr,
        "variance_V_T": sample_variance(wealth.terminal),
        "absorbed_fraction": float(np.mean(wealth.absorbed_at >= 0)),
    })

    header, rows = path_summary_rows(x, wealth)
    ctx.store.write_csv("paths.csv", header, rows)
    ctx.store.write_json("summary.json", summary)

    first_path = sample_paths(ctx.model, opts["n_steps"], 1, seed, first_index=first_index)
    first = simulate_wealth_batch(x - shift, base.policy, first_path).path(0)
    d = ctx.model.dim
    phi = np.vstack([first.strategies, np.full((1, d), 0.0)])
    ctx.store.write_csv(
        "wealth_path_0.csv",
        ["t", "V"] + [f"phi_{j + 1}" for j in range(d)],
        [[float(t), float(v + shift)] + [float(p) for p in phi[i]]
         for i, (t, v) in enumerate(zip(first.times, first.values))],
    )

    ctx.store.write_csv(
        "value_process.csv", ["t", "mean_J", "stderr_J"],
        [[float(t), float(mj), float(se)] for t, mj, se in zip(base.grid.times, wealth.j_mean, wealth.j_stderr)],
    )



def run_frontier(ctx: RunContext) -> None:
    opts = ctx.options
    if not opts["m_grid"]:
        raise ConfigError("frontier needs a non-empty m_grid", field="options.m_grid")
    base = _solve_base(ctx)
    rows = efficient_frontier(base, float(opts["x"]), opts["m_grid"], opts["mc_paths"], opts["seed"])
    header, table = frontier_rows(rows)
    ctx.store.write_csv("frontier.csv", header, table)
    ctx.store.write_csv("plot_frontier.csv", ["std", "mean"],
                        [[float(np.sqrt(r.variance)), r.mean] for r in rows])


def run_oracle_compare(ctx: RunContext) -> None:
    opts = ctx.options
    n_tree = int(opts["n_steps"])
    n_list = list(opts["n_list"] or [n_tree])
    ode_steps = opts["ode_steps"] or reference_steps(n_list + [n_tree])
    grid, _ = solve_opportunity(ctx.model, ctx.cone, ode_steps, opts["scheme"])

    tree, policy = dp_backward(discretize(ctx.model, n_tree, opts["gauss_points"]), ctx.cone)
    header, rows = tree_to_rows(tree, policy)
    ctx.store.write_csv("tree.csv", header, rows)

    report = compare_to_ode(tree, grid)
    table = convergence_table(ctx.model, ctx.cone, n_list, reference=grid, gauss_points=opts["gauss_points"])
    ctx.store.write_json("comparison.json", {
        "max_err_plus": report.max_err_plus,
        "max_err_minus": report.max_err_minus,
        "l2_err_plus": report.l2_err_plus,
        "l2_err_minus": report.l2_err_minus,
        "ode_steps": int(ode_steps),
        "table": [{"n": row["n"], "err": row["err"]} for row in table],
    })


COMMANDS: Dict[str, Callable[[RunContext], None]] = {
    "solve": run_solve,
    "unconstrained": run_unconstrained,
    "simulate": run_simulate,
    "frontier": run_frontier,
    "oracle-compare": run_oracle_compare,
}
