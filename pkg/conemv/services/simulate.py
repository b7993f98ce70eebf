"""
Path generation for the Lévy price process, the feedback wealth equation
dV = (V-^+ psi+ + V-^- psi-) dS, and the classical Markowitz wrappers built
on the solution of the base problem with initial wealth x = -1.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ..config.settings import settings
from ..models.market import LevyModel
from ..utils.exceptions import ConfigError, DegenerateBase, DimensionMismatch, GridMismatch, OutOfRange
from ..utils.helpers import mean_and_stderr, path_rng, psd_factor, sample_variance, variance_stderr
from .opportunity import OpportunityGrid, PolicyField
from .oracle import TreeSolution, terminal_distribution

logger = logging.getLogger(__name__)

ABSORB_TOL = 1e-14


@dataclass(frozen=True)
class MarketPath:
    times: np.ndarray
    gaussian: np.ndarray        # (N, d) drift-plus-diffusion part of each increment
    jump_counts: np.ndarray     # (N, K) jumps of each atom per step
    jump_sizes: np.ndarray      # (K, d)

    @property
    def increments(self) -> np.ndarray:
        return self.gaussian + self.jump_counts @ self.jump_sizes

    @property
    def values(self) -> np.ndarray:
        """Cumulative S - S_0 on the grid, starting at 0"""
        steps = self.increments
        return np.vstack([np.zeros((1, steps.shape[1])), np.cumsum(steps, axis=0)])


@dataclass(frozen=True)
class MarketPathBatch:
    """Paths first_index .. first_index + n_paths - 1 of the stream keyed by seed"""
    times: np.ndarray
    gaussian: np.ndarray        # (P, N, d)
    jump_counts: np.ndarray     # (P, N, K)
    jump_sizes: np.ndarray
    seed: int
    first_index: int

    @property
    def n_paths(self) -> int:
        return int(self.gaussian.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.gaussian.shape[1])

    def path(self, j: int) -> MarketPath:
        return MarketPath(self.times, self.gaussian[j], self.jump_counts[j], self.jump_sizes)

    @classmethod
    def of(cls, path: MarketPath) -> "MarketPathBatch":
        return cls(path.times, path.gaussian[None], path.jump_counts[None], path.jump_sizes, seed=-1, first_index=0)


@dataclass(frozen=True)
class WealthPath:
    times: np.ndarray
    values: np.ndarray              # (N+1,)
    strategies: np.ndarray          # (N, d), phi applied on each step
    absorbed_at: Optional[int]      # grid index where V reached 0


@dataclass(frozen=True)
class WealthBatch:
    times: np.ndarray
    values: np.ndarray              # (P, N+1)
    strategies: np.ndarray          # (P, N, d)
    absorbed_at: np.ndarray         # (P,), -1 when never absorbed

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def path(self, j: int) -> WealthPath:
        absorbed = int(self.absorbed_at[j])
        return WealthPath(self.times, self.values[j], self.strategies[j], None if absorbed < 0 else absorbed)


@dataclass(frozen=True)
class BaseSolution:
    """Opportunity grid and policy of the base problem (x = -1, target 0)"""
    model: LevyModel
    grid: OpportunityGrid
    policy: PolicyField


@dataclass(frozen=True)
class MarkowitzSolution:
    x: float
    scale: float
    e_hat: float
    e_hat_stderr: float
    tilde_m: float
    base: Union[BaseSolution, TreeSolution]
    target_mean: Optional[float] = None
    gamma: Optional[float] = None
    method: str = "mc"


@dataclass(frozen=True)
class FrontierRow:
    m: float
    mean: float
    variance: float
    stderr: float
    variance_stderr: float


def sample_paths(model: LevyModel, n_steps: int, n_paths: int, seed: int, first_index: int = 0) -> MarketPathBatch:
    """
    Draw paths on a uniform grid.  Path i uses its own Philox stream
    (seed, first_index + i): standard normals first, then Poisson counts.
    """
    if n_steps < 1:
        raise OutOfRange(f"n_steps must be >= 1, got {n_steps}", field="n_steps")
    if n_paths < 1:
        raise OutOfRange(f"n_paths must be >= 1, got {n_paths}", field="paths")
    dt = model.horizon / n_steps
    factor = psd_factor(model.diffusion)
    rank = factor.shape[1]
    lam_dt = model.jump_intensities * dt
    drift_cont = model.drift - model.jump_sizes.T @ model.jump_intensities

    gaussian = np.empty((n_paths, n_steps, model.dim))
    counts = np.empty((n_paths, n_steps, model.n_atoms), dtype=np.int64)
    for i in range(n_paths):
        rng = path_rng(seed, first_index + i)
        normals = rng.standard_normal((n_steps, rank))
        counts[i] = rng.poisson(lam_dt, size=(n_steps, model.n_atoms))
        gaussian[i] = drift_cont * dt + np.sqrt(dt) * (normals @ factor.T)

    logger.debug(f"Sampled {n_paths} paths from index {first_index} (seed={seed}, n_steps={n_steps})")
    return MarketPathBatch(
        times=np.linspace(0.0, model.horizon, n_steps + 1),
        gaussian=gaussian,
        jump_counts=counts,
        jump_sizes=model.jump_sizes,
        seed=int(seed),
        first_index=int(first_index),
    )


def sample_path(model: LevyModel, n_steps: int, seed: int, index: int = 0) -> MarketPath:
    return sample_paths(model, n_steps, 1, seed, index).path(0)


def _check_grids(policy: PolicyField, paths: MarketPathBatch) -> None:
    if policy.times.shape != paths.times.shape or not np.allclose(policy.times, paths.times, rtol=0.0, atol=1e-12):
        raise GridMismatch("policy and path grids differ", field="n_steps")
    if policy.dim != paths.gaussian.shape[2]:
        raise DimensionMismatch(f"policy dimension {policy.dim} differs from path dimension", field="policy")


def simulate_wealth_batch(x: float, policy: PolicyField, paths: MarketPathBatch) -> WealthBatch:
    """
    Euler scheme for the feedback wealth equation with exact jumps.

    On each step phi = V+ psi+ + V- psi- is fixed by the sign at the start of
    the step.  The drift-plus-diffusion part is applied first, then the jumps
    one at a time in atom order.  Once |V| <= 1e-14 |x| the path is absorbed:
    V = 0 and phi = 0 from then on.
    """
    _check_grids(policy, paths)
    x = float(x)
    n_paths, n_steps = paths.n_paths, paths.n_steps
    threshold = ABSORB_TOL * abs(x)

    wealth = np.full(n_paths, x)
    values = np.empty((n_paths, n_steps + 1))
    values[:, 0] = x
    strategies = np.zeros((n_paths, n_steps, policy.dim))
    absorbed_at = np.full(n_paths, -1, dtype=np.int64)
    absorbed = np.abs(wealth) <= threshold
    absorbed_at[absorbed] = 0
    wealth[absorbed] = 0.0

    for i in range(n_steps):
        phi = (np.maximum(wealth, 0.0)[:, None] * policy.psi_plus[i]
               + np.maximum(-wealth, 0.0)[:, None] * policy.psi_minus[i])
        phi[absorbed] = 0.0
        strategies[:, i] = phi

        wealth = wealth + np.einsum("pd,pd->p", phi, paths.gaussian[:, i])
        hit = ~absorbed & (np.abs(wealth) <= threshold)
        for k in range(paths.jump_sizes.shape[0]):
            counts = paths.jump_counts[:, i, k]
            for jump in range(int(counts.max(initial=0))):
                moving = (counts > jump) & ~absorbed & ~hit
                wealth[moving] += phi[moving] @ paths.jump_sizes[k]
                hit |= moving & (np.abs(wealth) <= threshold)

        wealth[hit] = 0.0
        absorbed_at[hit] = i + 1
        absorbed |= hit
        values[:, i + 1] = wealth

    return WealthBatch(times=paths.times, values=values, strategies=strategies, absorbed_at=absorbed_at)


def simulate_wealth(x: float, policy: PolicyField, path: MarketPath) -> WealthPath:
    return simulate_wealth_batch(x, policy, MarketPathBatch.of(path)).path(0)


@dataclass(frozen=True)
class TerminalWealth:
    """Terminal wealth of paths first_index .. first_index + P - 1, with J statistics per grid time"""
    terminal: np.ndarray            # (P,)
    absorbed_at: np.ndarray         # (P,), -1 when never absorbed
    first_index: int
    j_mean: Optional[np.ndarray] = None
    j_stderr: Optional[np.ndarray] = None


def _j_process(values: np.ndarray, grid: OpportunityGrid) -> np.ndarray:
    """J_t = (V_t+)^2 L+(t) + (V_t-)^2 L-(t)"""
    return np.maximum(values, 0.0) ** 2 * grid.l_plus + np.maximum(-values, 0.0) ** 2 * grid.l_minus


def simulate_terminal(
    x: float,
    policy: PolicyField,
    model: LevyModel,
    n_paths: int,
    seed: int,
    first_index: int = 0,
    grid: Optional[OpportunityGrid] = None,
    chunk: Optional[int] = None,
) -> TerminalWealth:
    """
    Simulate paths in chunks and keep only what the summaries need.

    Every path draws from its own (seed, index) stream, so the values do not
    depend on the chunk size.  With a grid, the mean and standard error of J
    per grid time are merged across chunks (Chan's pairwise update).
    """
    chunk = chunk or settings.CHUNK_PATHS
    n_steps = int(policy.times.shape[0]) - 1
    if n_paths < 1:
        raise OutOfRange(f"n_paths must be >= 1, got {n_paths}", field="paths")
    if chunk < 1:
        raise OutOfRange(f"chunk must be >= 1, got {chunk}", field="chunk")

    terminal = np.empty(n_paths)
    absorbed_at = np.empty(n_paths, dtype=np.int64)
    count, j_mean, j_m2 = 0, None, None
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        paths = sample_paths(model, n_steps, size, seed, first_index + start)
        wealth = simulate_wealth_batch(x, policy, paths)
        terminal[start:start + size] = wealth.terminal
        absorbed_at[start:start + size] = wealth.absorbed_at
        if grid is None:
            continue
        j = _j_process(wealth.values, grid)
        mean = np.mean(j, axis=0)
        m2 = np.sum((j - mean) ** 2, axis=0)
        if j_mean is None:
            j_mean, j_m2 = mean, m2
        else:
            total = count + size
            delta = mean - j_mean
            j_mean = j_mean + delta * (size / total)
            j_m2 = j_m2 + m2 + delta ** 2 * (count * size / total)
        count += size

    logger.debug(f"Simulated {n_paths} paths from index {first_index} in chunks of {chunk}")
    if grid is None:
        return TerminalWealth(terminal, absorbed_at, int(first_index))
    j_stderr = np.sqrt(j_m2 / (count - 1) / count) if count > 1 else np.zeros_like(j_mean)
    return TerminalWealth(terminal, absorbed_at, int(first_index), j_mean, j_stderr)


def _exact_e_hat(base: TreeSolution) -> float:
    values, probs = terminal_distribution(base.tree, base.policy, -1.0)
    return float(probs @ (values + 1.0))


def _mc_e_hat(base: BaseSolution, mc_paths: int, seed: int) -> Tuple[float, float]:
    wealth = simulate_terminal(-1.0, base.policy, base.model, mc_paths, seed, first_index=0)
    return mean_and_stderr(wealth.terminal + 1.0)


def markowitz_from_base(
    base: Union[BaseSolution, TreeSolution],
    x: float,
    m: Optional[float] = None,
    gamma: Optional[float] = None,
    mc_paths: int = 100000,
    seed: int = 0,
) -> MarkowitzSolution:
    """
    Scale the base strategy into the Markowitz solution.

    Mean target m: scale = (m - x) / e_hat.  Risk aversion gamma:
    scale = 1 / (gamma (1 - e_hat)).  e_hat = E[phi . S_T] is estimated on
    paths [0, mc_paths) or computed exactly when the base is a solved tree.
    """
    if (m is None) == (gamma is None):
        raise ConfigError("give exactly one of m and gamma", field="options")
    x = float(x)
    if m is not None and m < x:
        raise OutOfRange(f"target mean {m} is below the initial wealth {x}", field="m")
    if gamma is not None and not gamma > 0.0:
        raise OutOfRange(f"gamma must be positive, got {gamma}", field="gamma")

    if isinstance(base, TreeSolution):
        e_hat, stderr, method = _exact_e_hat(base), 0.0, "tree"
    else:
        e_hat, stderr = _mc_e_hat(base, mc_paths, seed)
        method = "mc"

    if e_hat <= max(3.0 * stderr, 1e-12):
        logger.warning(f"Base gain estimate {e_hat:.3e} is within its error band {stderr:.3e}")
        raise DegenerateBase(f"E[phi.S_T] estimate {e_hat:.3e} is not significantly positive (stderr {stderr:.3e})")

    if m is not None:
        scale = (m - x) / e_hat
    else:
        if 1.0 - e_hat <= 1e-12:
            raise DegenerateBase(f"E[1 - phi.S_T] = {1.0 - e_hat:.3e} is not positive")
        scale = 1.0 / (gamma * (1.0 - e_hat))

    logger.info(f"Markowitz scale={scale:.10f} from e_hat={e_hat:.10f} ({method})")
    return MarkowitzSolution(
        x=x, scale=float(scale), e_hat=e_hat, e_hat_stderr=stderr, tilde_m=x + float(scale),
        base=base, target_mean=m, gamma=gamma, method=method,
    )


def markowitz_from_gamma(base: Union[BaseSolution, TreeSolution], x: float, gamma: float,
                         mc_paths: int = 100000, seed: int = 0) -> MarkowitzSolution:
    return markowitz_from_base(base, x, gamma=gamma, mc_paths=mc_paths, seed=seed)


def simulate_markowitz(solution: MarkowitzSolution, paths: MarketPathBatch) -> WealthBatch:
    """
    Wealth under the feedback form of the Markowitz strategy: the base
    policy applied to V - tilde_m, which starts at x - tilde_m = -scale.
    """
    if not isinstance(solution.base, BaseSolution):
        raise ConfigError("simulation needs a continuous-time base solution", field="base")
    shifted = simulate_wealth_batch(solution.x - solution.tilde_m, solution.base.policy, paths)
    return WealthBatch(
        times=shifted.times,
        values=shifted.values + solution.tilde_m,
        strategies=shifted.strategies,
        absorbed_at=shifted.absorbed_at,
    )


def efficient_frontier(
    base: BaseSolution, x: float, m_grid: List[float], mc_paths: int = 100000, seed: int = 0
) -> List[FrontierRow]:
    """
    Mean and variance of V_T along the frontier.

    e_hat comes from paths [0, P) and every target is evaluated on the same
    paths [P, 2P).  The wealth equation is positively homogeneous, so one
    base simulation gives V_T = tilde_m + scale V^(-1)_T for all targets.
    Reported standard errors include the error propagated from e_hat.
    """
    e_hat, e_stderr = _mc_e_hat(base, mc_paths, seed)
    if e_hat <= max(3.0 * e_stderr, 1e-12):
        raise DegenerateBase(f"E[phi.S_T] estimate {e_hat:.3e} is not significantly positive (stderr {e_stderr:.3e})")
    base_terminal = simulate_terminal(-1.0, base.policy, base.model, mc_paths, seed, first_index=mc_paths).terminal

    rows = []
    for m in m_grid:
        if m < x:
            raise OutOfRange(f"target mean {m} is below the initial wealth {x}", field="m_grid")
        scale = (m - x) / e_hat
        terminal = x + scale + scale * base_terminal
        mean, mean_stderr = mean_and_stderr(terminal)
        variance = sample_variance(terminal)
        rel = e_stderr / e_hat
        rows.append(FrontierRow(
            m=float(m),
            mean=mean,
            variance=variance,
            stderr=float(np.hypot(mean_stderr, (m - x) * rel)),
            variance_stderr=float(np.hypot(variance_stderr(terminal), 2.0 * variance * rel)),
        ))
        logger.debug(f"Frontier m={m}: mean={mean:.6f}, variance={variance:.6f}")
    return rows


def frontier_rows(rows: List[FrontierRow]) -> Tuple[List[str], List[list]]:
    header = ["m", "mean", "variance", "stderr", "variance_stderr"]
    return header, [[r.m, r.mean, r.variance, r.stderr, r.variance_stderr] for r in rows]


def path_summary_rows(x: float, wealth: TerminalWealth) -> Tuple[List[str], List[list]]:
    """Per-path terminal wealth and gain"""
    first = wealth.first_index
    return ["index", "V_T", "gain"], [[first + j, float(v), float(v - x)] for j, v in enumerate(wealth.terminal)]
