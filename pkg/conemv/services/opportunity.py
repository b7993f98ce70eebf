"""
Backward integration of the coupled equations for the opportunity processes.

In a Lévy model L+ and L- are deterministic, so the drift equations reduce
to the ODE system dL±/dt = -min_K g±(.; L+(t), L-(t)) with L±(T) = 1.  We
integrate in reversed time tau = T - t, re-solving the cone minimization at
every stage.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from ..models.cones import Cone
from ..models.market import LevyModel, deterministic_joint_characteristics, modified_characteristics
from ..utils.exceptions import MinimizerUnbounded, NonPositiveL, OutOfRange
from ..utils.helpers import make_readonly
from .gfun import ConeMinimum, MinimizeOptions, MinimizerStatus, minimize_g

logger = logging.getLogger(__name__)

L_FLOOR = 1e-10
SCHEMES = ("euler", "rk4")

ConeField = Union[Cone, Callable[[float], Cone]]


@dataclass(frozen=True)
class OpportunityGrid:
    times: np.ndarray
    l_plus: np.ndarray
    l_minus: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.times.shape[0]) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class PolicyField:
    """Minimizers and minimum values of g± at each grid time"""
    times: np.ndarray
    psi_plus: np.ndarray        # (N+1, d)
    psi_minus: np.ndarray       # (N+1, d)
    min_plus: np.ndarray        # (N+1,)
    min_minus: np.ndarray       # (N+1,)

    @property
    def dim(self) -> int:
        return int(self.psi_plus.shape[1])


def _cone_at(cone_fn: ConeField, t: float) -> Cone:
    return cone_fn if isinstance(cone_fn, Cone) else cone_fn(t)


def _check_level(value: float, name: str, t: float) -> None:
    if not value > L_FLOOR:
        logger.error(f"{name} reached {value:.3e} at t={t:.6g}")
        raise NonPositiveL(f"{name} = {value:.3e} at t = {t:.6g}; the model admits an arbitrage-like gain")


def _bounded(result: ConeMinimum, name: str, t: float) -> ConeMinimum:
    if result.status is MinimizerStatus.UNBOUNDED:
        raise MinimizerUnbounded(f"min of {name} is unbounded below at t = {t:.6g}")
    return result


class _Stage:
    """Right-hand side min g± at one (t, L+, L-) with warm-started minimizers"""

    def __init__(self, model: LevyModel, cone_fn: ConeField, opts: Optional[MinimizeOptions]):
        self.model = model
        self.cone_fn = cone_fn
        self.opts = opts
        self.warm_plus: Optional[np.ndarray] = None
        self.warm_minus: Optional[np.ndarray] = None

    def __call__(self, t: float, l_plus: float, l_minus: float) -> Tuple[ConeMinimum, ConeMinimum]:
        _check_level(l_plus, "L+", t)
        _check_level(l_minus, "L-", t)
        cone = _cone_at(self.cone_fn, t)
        jc = deterministic_joint_characteristics(self.model, min(l_plus, 1.0), min(l_minus, 1.0))
        plus = _bounded(minimize_g(1, cone, self.model, jc, self.opts, self.warm_plus), "g+", t)
        minus = _bounded(minimize_g(-1, cone, self.model, jc, self.opts, self.warm_minus), "g-", t)
        self.warm_plus, self.warm_minus = plus.minimizer, minus.minimizer
        return plus, minus


def _check_scheme(scheme: str, n_steps: int) -> None:
    if scheme not in SCHEMES:
        raise OutOfRange(f"unknown scheme {scheme!r}", field="scheme")
    if not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
        raise OutOfRange(f"n_steps must be a positive integer, got {n_steps!r}", field="n_steps")


def solve_opportunity(
    model: LevyModel,
    cone_fn: ConeField,
    n_steps: int,
    scheme: str = "rk4",
    opts: Optional[MinimizeOptions] = None,
) -> Tuple[OpportunityGrid, PolicyField]:
    """
    Integrate (L+, L-) backward from L±(T) = 1 on a uniform grid.

    cone_fn is a Cone or a function t -> Cone sampled at stage times.  The
    policy at each grid time is the minimizer at the stored grid values.
    """
    _check_scheme(scheme, n_steps)
    n_steps = int(n_steps)
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    h = model.horizon / n_steps
    d = model.dim

    l_plus = np.ones(n_steps + 1)
    l_minus = np.ones(n_steps + 1)
    psi_plus = np.zeros((n_steps + 1, d))
    psi_minus = np.zeros((n_steps + 1, d))
    min_plus = np.zeros(n_steps + 1)
    min_minus = np.zeros(n_steps + 1)
    stage = _Stage(model, cone_fn, opts)

    logger.info(f"Solving opportunity ODE: scheme={scheme}, n_steps={n_steps}, T={model.horizon}")
    for i in range(n_steps, 0, -1):
        t, lp, lm = times[i], l_plus[i], l_minus[i]
        plus, minus = stage(t, lp, lm)
        psi_plus[i], psi_minus[i] = plus.minimizer, minus.minimizer
        min_plus[i], min_minus[i] = plus.value, minus.value

        k1 = np.array([plus.value, minus.value])
        if scheme == "euler":
            increment = h * k1
        else:
            mid = t - 0.5 * h
            k2 = np.array([r.value for r in stage(mid, lp + 0.5 * h * k1[0], lm + 0.5 * h * k1[1])])
            k3 = np.array([r.value for r in stage(mid, lp + 0.5 * h * k2[0], lm + 0.5 * h * k2[1])])
            k4 = np.array([r.value for r in stage(times[i - 1], lp + h * k3[0], lm + h * k3[1])])
            increment = h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            stage.warm_plus, stage.warm_minus = psi_plus[i], psi_minus[i]

        l_plus[i - 1] = lp + increment[0]
        l_minus[i - 1] = lm + increment[1]
        if i % max(1, n_steps // 10) == 0:
            logger.debug(f"t={times[i - 1]:.4f}: L+={l_plus[i - 1]:.10f}, L-={l_minus[i - 1]:.10f}")

    plus, minus = stage(times[0], l_plus[0], l_minus[0])
    psi_plus[0], psi_minus[0] = plus.minimizer, minus.minimizer
    min_plus[0], min_minus[0] = plus.value, minus.value

    make_readonly(times, l_plus, l_minus, psi_plus, psi_minus, min_plus, min_minus)
    logger.info(f"Opportunity solved: L+(0)={l_plus[0]:.10f}, L-(0)={l_minus[0]:.10f}")
    return (
        OpportunityGrid(times=times, l_plus=l_plus, l_minus=l_minus),
        PolicyField(times=times, psi_plus=psi_plus, psi_minus=psi_minus, min_plus=min_plus, min_minus=min_minus),
    )


def adjustment(model: LevyModel) -> Tuple[np.ndarray, float]:
    """
    Adjustment vector a = pinv(c_bar) b_bar and the rate kappa = b_bar . a
    for deterministic opportunity processes.
    """
    b_bar, c_bar = modified_characteristics(model)
    a = np.linalg.pinv(c_bar) @ b_bar
    residual = float(np.linalg.norm(c_bar @ a - b_bar))
    if residual > 1e-10 * (1.0 + float(np.linalg.norm(b_bar))):
        raise MinimizerUnbounded(f"modified drift is not in the range of c_bar (residual {residual:.3e})")
    return a, float(b_bar @ a)


def solve_unconstrained(
    model: LevyModel, n_steps: int, scheme: str = "rk4"
) -> Tuple[OpportunityGrid, PolicyField]:
    """Single opportunity process with dL/dt = kappa L and policy -a / +a"""
    _check_scheme(scheme, n_steps)
    n_steps = int(n_steps)
    a, kappa = adjustment(model)
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    h = model.horizon / n_steps

    # one reversed-time step of dL/dtau = -kappa L
    z = -h * kappa
    factor = 1.0 + z if scheme == "euler" else 1.0 + z + z ** 2 / 2.0 + z ** 3 / 6.0 + z ** 4 / 24.0

    level = np.ones(n_steps + 1)
    for i in range(n_steps, 0, -1):
        level[i - 1] = level[i] * factor
        _check_level(level[i - 1], "L", times[i - 1])

    psi_plus = np.tile(-a, (n_steps + 1, 1))
    psi_minus = np.tile(a, (n_steps + 1, 1))
    min_values = -kappa * level
    l_minus = level.copy()
    min_minus = min_values.copy()
    make_readonly(times, level, l_minus, psi_plus, psi_minus, min_values, min_minus)

    logger.info(f"Unconstrained solve: kappa={kappa:.10f}, L(0)={level[0]:.10f}")
    return (
        OpportunityGrid(times=times, l_plus=level, l_minus=l_minus),
        PolicyField(times=times, psi_plus=psi_plus, psi_minus=psi_minus, min_plus=min_values, min_minus=min_minus),
    )


def grid_to_rows(grid: OpportunityGrid, policy: PolicyField) -> Tuple[List[str], List[list]]:
    """Header and rows of the opportunity CSV"""
    d = policy.dim
    header = ["t", "L_plus", "L_minus", "min_g_plus", "min_g_minus"]
    header += [f"psi_plus_{j + 1}" for j in range(d)] + [f"psi_minus_{j + 1}" for j in range(d)]
    rows = []
    for i, t in enumerate(grid.times):
        row = [float(t), float(grid.l_plus[i]), float(grid.l_minus[i]),
               float(policy.min_plus[i]), float(policy.min_minus[i])]
        row += [float(v) for v in policy.psi_plus[i]] + [float(v) for v in policy.psi_minus[i]]
        rows.append(row)
    return header, rows


def opportunity_at(grid: OpportunityGrid, t: float) -> Tuple[float, float]:
    """(L+(t), L-(t)) by linear interpolation on the grid"""
    if not (0.0 <= t <= grid.horizon):
        raise OutOfRange(f"t = {t} outside [0, {grid.horizon}]", field="t")
    return float(np.interp(t, grid.times, grid.l_plus)), float(np.interp(t, grid.times, grid.l_minus))
