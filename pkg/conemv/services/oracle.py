"""
Exact dynamic programming on finite scenario trees.

Per-step returns are i.i.d. atoms, so the one-period problem is
scale-invariant in |V| and the DP state reduces to (step, sign of V).  The
tree values are the ground truth the ODE solver is checked against.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import reduce
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ..models.cones import Cone
from ..models.market import LevyModel, build_levy_model, deterministic_joint_characteristics
from ..utils.exceptions import (
    DimensionMismatch,
    GridMismatch,
    MinimizerUnbounded,
    NonPositiveL,
    OutOfRange,
    StepTooCoarse,
)
from ..utils.helpers import make_readonly, psd_factor
from .gfun import MinimizeOptions, MinimizerStatus, minimize_g, parse_sign
from .opportunity import ConeField, OpportunityGrid, solve_opportunity

logger = logging.getLogger(__name__)

NODE_CAP = 1_000_000
L_FLOOR = 1e-10
ABSORB_TOL = 1e-14


@dataclass(frozen=True)
class ScenarioTree:
    """i.i.d. one-step return atoms and, once solved, the DP values per step"""
    n_steps: int
    dt: float
    increments: np.ndarray      # (A, d)
    probs: np.ndarray           # (A,)
    l_plus: Optional[np.ndarray] = None
    l_minus: Optional[np.ndarray] = None

    @classmethod
    def from_atoms(cls, increments, probs, n_steps: int, dt: float) -> "ScenarioTree":
        increments = np.array(increments, dtype=float)
        if increments.ndim == 1:
            increments = increments[:, None]
        probs = np.array(probs, dtype=float).reshape(-1)
        if increments.shape[0] != probs.shape[0]:
            raise DimensionMismatch(f"{increments.shape[0]} atoms but {probs.shape[0]} probabilities", field="probs")
        if np.any(probs <= 0.0) or abs(float(np.sum(probs)) - 1.0) > 1e-12:
            raise OutOfRange("probabilities must be positive and sum to 1", field="probs")
        if n_steps < 1 or dt <= 0.0:
            raise OutOfRange("need n_steps >= 1 and dt > 0", field="n_steps")
        make_readonly(increments, probs)
        return cls(n_steps=int(n_steps), dt=float(dt), increments=increments, probs=probs)

    @property
    def dim(self) -> int:
        return int(self.increments.shape[1])

    @property
    def n_atoms(self) -> int:
        return int(self.probs.shape[0])

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def is_solved(self) -> bool:
        return self.l_plus is not None

    def as_levy_model(self) -> LevyModel:
        """
        Atom model with intensities p/dt, drift sum(p ds)/dt and no diffusion,
        whose g-functions give one_step_objective = l_same + dt * g.
        """
        nonzero = np.linalg.norm(self.increments, axis=1) > 0.0
        drift = self.increments.T @ self.probs / self.dt
        return build_levy_model(
            dim=self.dim,
            drift=drift,
            diffusion=np.zeros((self.dim, self.dim)),
            jump_atoms=[(u, p / self.dt) for u, p in zip(self.increments[nonzero], self.probs[nonzero])],
            horizon=self.dt * self.n_steps,
        )


@dataclass(frozen=True)
class TreePolicy:
    psi_plus: np.ndarray        # (n_steps, d)
    psi_minus: np.ndarray       # (n_steps, d)


@dataclass(frozen=True)
class TreeSolution:
    """A solved tree and its DP policy, usable as the base of the Markowitz wrappers"""
    tree: ScenarioTree
    policy: TreePolicy


@dataclass(frozen=True)
class MartingaleReport:
    max_drift: float
    min_drift: float
    max_abs_drift: float
    n_nodes: int
    drifts: List[np.ndarray]        # per step, E[J_next | node] - J_node
    drift_rates: List[np.ndarray]   # drifts / dt


@dataclass(frozen=True)
class PolicyEvaluation:
    l_plus: np.ndarray
    l_minus: np.ndarray
    max_gap: float                  # max over nodes and signs of L - l
    root_value: float


@dataclass(frozen=True)
class ComparisonReport:
    max_err_plus: float
    max_err_minus: float
    l2_err_plus: float
    l2_err_minus: float

    @property
    def max_err(self) -> float:
        return max(self.max_err_plus, self.max_err_minus)


def discretize(model: LevyModel, n_steps: int, gauss_points: int = 5) -> ScenarioTree:
    """
    One-step law: Gauss-Hermite atoms per diffusion factor, times {no jump,
    one jump of atom k} with probabilities 1 - sum(lam) dt and lam_k dt.
    All atoms are then shifted so the one-step mean is exactly b dt.
    """
    if n_steps < 1:
        raise OutOfRange(f"n_steps must be >= 1, got {n_steps}", field="n_steps")
    if gauss_points < 1:
        raise OutOfRange(f"gauss_points must be >= 1, got {gauss_points}", field="gauss_points")
    dt = model.horizon / n_steps
    jump_probs = model.jump_intensities * dt
    if np.any(jump_probs >= 1.0) or float(np.sum(jump_probs)) >= 1.0:
        raise StepTooCoarse(f"jump probability {float(np.sum(jump_probs)):.4f} per step is not below 1", field="n_steps")

    factor = psd_factor(model.diffusion)
    nodes, weights = hermegauss(gauss_points)
    weights = weights / math.sqrt(2.0 * math.pi)

    # tensor-product grid over the diffusion factors
    points = np.zeros((1, factor.shape[1]))
    point_probs = np.ones(1)
    for j in range(factor.shape[1]):
        points = np.repeat(points, gauss_points, axis=0)
        points[:, j] = np.tile(nodes, point_probs.shape[0])
        point_probs = np.outer(point_probs, weights).reshape(-1)
    gaussian = math.sqrt(dt) * points @ factor.T

    jumps = np.vstack([np.zeros((1, model.dim)), model.jump_sizes])
    jump_p = np.concatenate([[1.0 - float(np.sum(jump_probs))], jump_probs])

    increments = (gaussian[:, None, :] + jumps[None, :, :]).reshape(-1, model.dim)
    probs = np.outer(point_probs, jump_p).reshape(-1)
    keep = probs > 0.0
    increments, probs = increments[keep], probs[keep] / float(np.sum(probs[keep]))
    increments = increments + (model.drift * dt - probs @ increments)

    logger.debug(f"Discretized model: n_steps={n_steps}, atoms per step={probs.shape[0]}")
    return ScenarioTree.from_atoms(increments, probs, n_steps, dt)


def one_step_objective(sign, psi, tree: ScenarioTree, l_plus_next: float, l_minus_next: float) -> float:
    """
    E[ ((1 + s psi.ds)+)^2 l_same + ((1 + s psi.ds)-)^2 l_other ], written as
    l_same plus the deviation from it so that psi = 0 returns l_same exactly.
    """
    s = parse_sign(sign)
    psi = np.asarray(psi, dtype=float).reshape(tree.dim)
    same, other = (l_plus_next, l_minus_next) if s > 0 else (l_minus_next, l_plus_next)
    w = 1.0 + s * (tree.increments @ psi)
    pos = np.maximum(w, 0.0)
    neg = np.maximum(-w, 0.0)
    return float(same + np.sum(tree.probs * ((pos ** 2 - 1.0) * same + neg ** 2 * other)))


def _cone_at(cone_fn: ConeField, t: float) -> Cone:
    return cone_fn if isinstance(cone_fn, Cone) else cone_fn(t)


def dp_backward(
    tree: ScenarioTree, cone_fn: ConeField, opts: Optional[MinimizeOptions] = None
) -> Tuple[ScenarioTree, TreePolicy]:
    """
    L±_n = min_K E[((1 ± psi.ds)+)^2 L±_{n+1} + ((1 ± psi.ds)-)^2 L∓_{n+1}],
    minimized with the g-function machinery on the tree's atom model.
    """
    n, d = tree.n_steps, tree.dim
    atom_model = tree.as_levy_model()
    l_plus = np.ones(n + 1)
    l_minus = np.ones(n + 1)
    psi_plus = np.zeros((n, d))
    psi_minus = np.zeros((n, d))
    warm_plus: Optional[np.ndarray] = None
    warm_minus: Optional[np.ndarray] = None

    for step in range(n - 1, -1, -1):
        cone = _cone_at(cone_fn, step * tree.dt)
        lp, lm = l_plus[step + 1], l_minus[step + 1]
        jc = deterministic_joint_characteristics(atom_model, lp, lm)

        plus = minimize_g(1, cone, atom_model, jc, opts, warm_plus)
        if plus.status is MinimizerStatus.UNBOUNDED:
            raise MinimizerUnbounded(f"tree step {step}: g+ unbounded below")
        psi_plus[step], l_plus[step] = _settle(1, plus.minimizer, tree, lp, lm)

        if cone.is_symmetric and lp == lm:
            psi_minus[step] = -psi_plus[step]
            l_minus[step] = l_plus[step]
        else:
            minus = minimize_g(-1, cone, atom_model, jc, opts, warm_minus)
            if minus.status is MinimizerStatus.UNBOUNDED:
                raise MinimizerUnbounded(f"tree step {step}: g- unbounded below")
            psi_minus[step], l_minus[step] = _settle(-1, minus.minimizer, tree, lp, lm)

        for name, value in (("L+", l_plus[step]), ("L-", l_minus[step])):
            if not value > L_FLOOR:
                logger.error(f"Tree {name} reached {value:.3e} at step {step}")
                raise NonPositiveL(f"tree {name} = {value:.3e} at step {step}")
        warm_plus, warm_minus = psi_plus[step], psi_minus[step]

    make_readonly(l_plus, l_minus, psi_plus, psi_minus)
    logger.info(f"Tree DP solved: n_steps={n}, L+(0)={l_plus[0]:.10f}, L-(0)={l_minus[0]:.10f}")
    return replace(tree, l_plus=l_plus, l_minus=l_minus), TreePolicy(psi_plus=psi_plus, psi_minus=psi_minus)


def _settle(sign: int, psi: np.ndarray, tree: ScenarioTree, lp: float, lm: float) -> Tuple[np.ndarray, float]:
    """Objective of the minimizer, falling back to psi = 0 when rounding makes it worse"""
    value = one_step_objective(sign, psi, tree, lp, lm)
    same = lp if sign > 0 else lm
    if value > same:
        return np.zeros(tree.dim), same
    return psi, value


def _require_solved(tree: ScenarioTree) -> None:
    if not tree.is_solved:
        raise OutOfRange("tree has not been solved by dp_backward", field="tree")


def _check_size(tree: ScenarioTree, node_cap: int) -> None:
    total = sum(tree.n_atoms ** k for k in range(tree.n_steps + 1))
    if total > node_cap:
        raise OutOfRange(f"tree has {total} nodes, above the cap {node_cap}", field="n_steps")


def _policy_step(policy: TreePolicy, step: int, wealth: np.ndarray) -> np.ndarray:
    return (np.maximum(wealth, 0.0)[:, None] * policy.psi_plus[step]
            + np.maximum(-wealth, 0.0)[:, None] * policy.psi_minus[step])


def _absorb(wealth: np.ndarray, x: float) -> np.ndarray:
    return np.where(np.abs(wealth) <= ABSORB_TOL * abs(x), 0.0, wealth)


def check_martingale_optimality(
    tree: ScenarioTree, policy: TreePolicy, x: float, node_cap: int = NODE_CAP
) -> MartingaleReport:
    """One-step drift of J = (V+)^2 L+ + (V-)^2 L- at every node of the tree"""
    _require_solved(tree)
    _check_size(tree, node_cap)
    wealth = np.array([float(x)])
    drifts, rates = [], []
    for step in range(tree.n_steps):
        phi = _policy_step(policy, step, wealth)
        wealth_next = _absorb(wealth[:, None] + phi @ tree.increments.T, x)
        j_node = np.maximum(wealth, 0.0) ** 2 * tree.l_plus[step] + np.maximum(-wealth, 0.0) ** 2 * tree.l_minus[step]
        j_next = (np.maximum(wealth_next, 0.0) ** 2 * tree.l_plus[step + 1]
                  + np.maximum(-wealth_next, 0.0) ** 2 * tree.l_minus[step + 1])
        drift = j_next @ tree.probs - j_node
        drifts.append(drift)
        rates.append(drift / tree.dt)
        wealth = wealth_next.reshape(-1)

    flat = np.concatenate(drifts)
    return MartingaleReport(
        max_drift=float(np.max(flat)),
        min_drift=float(np.min(flat)),
        max_abs_drift=float(np.max(np.abs(flat))),
        n_nodes=int(flat.shape[0]),
        drifts=drifts,
        drift_rates=rates,
    )


def policy_evaluation(tree: ScenarioTree, fixed_policy: TreePolicy, x: float = -1.0) -> PolicyEvaluation:
    """Backward recursion with the fixed policy in place of the minimum"""
    _require_solved(tree)
    n = tree.n_steps
    l_plus = np.ones(n + 1)
    l_minus = np.ones(n + 1)
    for step in range(n - 1, -1, -1):
        lp, lm = l_plus[step + 1], l_minus[step + 1]
        l_plus[step] = one_step_objective(1, fixed_policy.psi_plus[step], tree, lp, lm)
        l_minus[step] = one_step_objective(-1, fixed_policy.psi_minus[step], tree, lp, lm)

    gap = max(float(np.max(tree.l_plus - l_plus)), float(np.max(tree.l_minus - l_minus)))
    root = max(x, 0.0) ** 2 * l_plus[0] + max(-x, 0.0) ** 2 * l_minus[0]
    return PolicyEvaluation(l_plus=l_plus, l_minus=l_minus, max_gap=gap, root_value=float(root))


def terminal_distribution(
    tree: ScenarioTree, policy: TreePolicy, x: float, node_cap: int = NODE_CAP
) -> Tuple[np.ndarray, np.ndarray]:
    """Leaf wealth values and probabilities under the sign-switching feedback policy"""
    _check_size(tree, node_cap)
    wealth = np.array([float(x)])
    probs = np.ones(1)
    for step in range(tree.n_steps):
        phi = _policy_step(policy, step, wealth)
        wealth = _absorb(wealth[:, None] + phi @ tree.increments.T, x).reshape(-1)
        probs = np.outer(probs, tree.probs).reshape(-1)
    return wealth, probs


def tree_to_rows(tree: ScenarioTree, policy: TreePolicy) -> Tuple[List[str], List[list]]:
    """Header and rows of the tree CSV; the terminal step has no policy"""
    _require_solved(tree)
    d = tree.dim
    header = ["step", "L_plus", "L_minus"]
    header += [f"psi_plus_{j + 1}" for j in range(d)] + [f"psi_minus_{j + 1}" for j in range(d)]
    rows = []
    for step in range(tree.n_steps + 1):
        row = [step, float(tree.l_plus[step]), float(tree.l_minus[step])]
        if step < tree.n_steps:
            row += [float(v) for v in policy.psi_plus[step]] + [float(v) for v in policy.psi_minus[step]]
        else:
            row += [""] * (2 * d)
        rows.append(row)
    return header, rows


def compare_to_ode(tree: ScenarioTree, grid: OpportunityGrid) -> ComparisonReport:
    """Max and root-mean-square gaps between tree and ODE values at the tree times"""
    _require_solved(tree)
    horizon = tree.dt * tree.n_steps
    if not math.isclose(horizon, grid.horizon, rel_tol=1e-12):
        raise GridMismatch(f"tree horizon {horizon} differs from grid horizon {grid.horizon}", field="grid")
    index = np.searchsorted(grid.times, tree.times - 1e-12 * horizon)
    index = np.clip(index, 0, grid.times.shape[0] - 1)
    if not np.allclose(grid.times[index], tree.times, rtol=0.0, atol=1e-12 * horizon):
        raise GridMismatch("tree times are not a subset of the ODE grid", field="grid")

    err_plus = np.abs(tree.l_plus - grid.l_plus[index])
    err_minus = np.abs(tree.l_minus - grid.l_minus[index])
    return ComparisonReport(
        max_err_plus=float(np.max(err_plus)),
        max_err_minus=float(np.max(err_minus)),
        l2_err_plus=float(np.sqrt(np.mean(err_plus ** 2))),
        l2_err_minus=float(np.sqrt(np.mean(err_minus ** 2))),
    )


def reference_steps(n_list: List[int], minimum: int = 1000) -> int:
    """Smallest multiple of lcm(n_list) that is at least `minimum`"""
    lcm = reduce(lambda a, b: a * b // math.gcd(a, b), n_list, 1)
    return lcm * max(1, math.ceil(minimum / lcm))


def convergence_table(
    model: LevyModel,
    cone_fn: ConeField,
    n_list: List[int],
    reference: Optional[OpportunityGrid] = None,
    gauss_points: int = 5,
    scheme: str = "rk4",
) -> List[Dict[str, Union[int, float]]]:
    """Tree-vs-ODE error for each tree size in n_list"""
    if not n_list:
        raise OutOfRange("n_list must not be empty", field="n_list")
    if reference is None:
        reference, _ = solve_opportunity(model, cone_fn, reference_steps(n_list), scheme)

    table = []
    for n in n_list:
        tree, _ = dp_backward(discretize(model, n, gauss_points), cone_fn)
        report = compare_to_ode(tree, reference)
        logger.info(f"Tree n={n}: max error {report.max_err:.3e}")
        table.append({"n": int(n), "err": report.max_err,
                      "err_plus": report.max_err_plus, "err_minus": report.max_err_minus})
    return table


def tree_markowitz_moments(tree: ScenarioTree, policy: TreePolicy, tilde_m: float, scale: float) -> Tuple[float, float]:
    """Exact mean and variance of V_T = tilde_m + scale * V^(-1)_T on the tree"""
    values, probs = terminal_distribution(tree, policy, -1.0)
    terminal = tilde_m + scale * values
    mean = float(probs @ terminal)
    return mean, float(probs @ (terminal - mean) ** 2)
