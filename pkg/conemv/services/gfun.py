"""
The predictable functions g1, g2 and g = g1 + g2 of the two sign problems,
their cone-constrained minimization and the drift of the value process J.

For sign s in {+1, -1} the "same" side is (l+, y) when s = +1 and (l-, z)
when s = -1.  With a_k = u_k . psi and w_k = 1 + s a_k:

    g1 = l psi'c psi + 2 s l psi'b + 2 s psi'c^{S,l}
    g2 = sum_k lam_k [ l (w+^2 - 1 - 2 s a) + (w+^2 - 1) y_same + w-^2 (l_other + z_other) ]

Both are exact finite sums over the jump atoms.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize, nnls

from ..models.cones import Cone, FullSpace, LinearSpan, NonnegativeOrthant, ZeroCone
from ..models.market import JointCharacteristics, LevyModel
from ..utils.exceptions import ConfigError, InvalidState, NotConverged, NotPSD, OutOfRange
from ..utils.helpers import as_vector

logger = logging.getLogger(__name__)

Sign = Union[int, str]


class MinimizerStatus(str, Enum):
    """Where the minimizer of g sits relative to the cone"""
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    AT_ZERO = "AtZero"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class GEvaluation:
    g1: float
    g2: float
    g: float
    gradient: np.ndarray


@dataclass(frozen=True)
class ConeMinimum:
    minimizer: np.ndarray
    value: float
    status: MinimizerStatus
    iterations: int = 0


@dataclass(frozen=True)
class MinimizeOptions:
    """Projected-gradient settings"""
    tol: float = 1e-10
    max_iter: int = 10000
    divergence_cap: float = 1e8
    armijo: float = 1e-4
    max_backtracks: int = 60
    stall_factor: float = 1e3
    interior_tol: float = 1e-8


DEFAULT_OPTIONS = MinimizeOptions()


def parse_sign(sign: Sign) -> int:
    if sign in (1, "+", "plus"):
        return 1
    if sign in (-1, "-", "minus"):
        return -1
    raise OutOfRange(f"sign must be + or -, got {sign!r}", field="sign")


def _side(s: int, jc: JointCharacteristics) -> Tuple[float, float, float, np.ndarray, np.ndarray, np.ndarray]:
    """(l, l_other, b_l, c_s_l, y_same, z_other) for sign s"""
    if s > 0:
        return (jc.ell_plus_left, jc.ell_minus_left, jc.b_ell_plus, jc.c_s_ell_plus,
                jc.jump_marks[:, 0], jc.jump_marks[:, 1])
    return (jc.ell_minus_left, jc.ell_plus_left, jc.b_ell_minus, jc.c_s_ell_minus,
            jc.jump_marks[:, 1], jc.jump_marks[:, 0])


def eval_g(sign: Sign, psi, model: LevyModel, jc: JointCharacteristics) -> GEvaluation:
    """Evaluate g1, g2, g and the chain-rule gradient of g at psi"""
    s = parse_sign(sign)
    psi = as_vector(psi, model.dim, "psi")
    ell, ell_other, _, c_s_ell, y_same, z_other = _side(s, jc)
    b, c = model.drift, model.diffusion

    c_psi = c @ psi
    g1 = ell * float(psi @ c_psi) + 2.0 * s * ell * float(psi @ b) + 2.0 * s * float(psi @ c_s_ell)
    gradient = 2.0 * ell * c_psi + 2.0 * s * ell * b + 2.0 * s * c_s_ell

    g2 = 0.0
    if not model.is_continuous:
        lam, u = model.jump_intensities, model.jump_sizes
        a = u @ psi
        w = 1.0 + s * a
        pos = np.maximum(w, 0.0)
        neg = np.maximum(-w, 0.0)
        other = ell_other + z_other
        terms = ell * (pos ** 2 - 1.0 - 2.0 * s * a) + (pos ** 2 - 1.0) * y_same + neg ** 2 * other
        g2 = float(np.sum(lam * terms))
        weights = lam * (ell * (2.0 * s * pos - 2.0 * s) + 2.0 * s * pos * y_same - 2.0 * s * neg * other)
        gradient = gradient + u.T @ weights

    return GEvaluation(g1=g1, g2=g2, g=g1 + g2, gradient=gradient)


def hessian_g(sign: Sign, psi, model: LevyModel, jc: JointCharacteristics) -> np.ndarray:
    """Piecewise-constant Hessian of g; at a kink the w >= 0 branch is used"""
    s = parse_sign(sign)
    psi = as_vector(psi, model.dim, "psi")
    ell, ell_other, _, _, y_same, z_other = _side(s, jc)
    hess = 2.0 * ell * model.diffusion
    if not model.is_continuous:
        u = model.jump_sizes
        w = 1.0 + s * (u @ psi)
        curvature = np.where(w >= 0.0, ell + y_same, ell_other + z_other)
        hess = hess + 2.0 * (u.T * (model.jump_intensities * curvature)) @ u
    return 0.5 * (hess + hess.T)


def _classify(psi: np.ndarray, gradient: np.ndarray, opts: MinimizeOptions) -> MinimizerStatus:
    if not np.any(psi):
        return MinimizerStatus.AT_ZERO
    if np.linalg.norm(gradient) <= opts.interior_tol:
        return MinimizerStatus.INTERIOR
    return MinimizerStatus.BOUNDARY


def _zero_minimum(dim: int) -> ConeMinimum:
    return ConeMinimum(np.zeros(dim), 0.0, MinimizerStatus.AT_ZERO)


def _range_solve(hess: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Minimum-norm solution of hess x = rhs, or None when rhs leaves the range"""
    x = np.linalg.pinv(hess) @ rhs
    if np.linalg.norm(hess @ x - rhs) > 1e-10 * (1.0 + np.linalg.norm(rhs)):
        return None
    return x


def _closed_form(sign: int, cone: Cone, model: LevyModel, jc: JointCharacteristics,
                 opts: MinimizeOptions) -> Optional[ConeMinimum]:
    """
    Minimize the quadratic g = l psi'c psi + 2 psi'q of a continuous model.

    Subspaces use the pseudoinverse; generator cones reduce to nonnegative
    least squares in the generator weights.  Returns None when the cone has
    neither form or the reduced problem is not bounded below in closed form.
    """
    ell, _, _, c_s_ell, _, _ = _side(sign, jc)
    hess = ell * model.diffusion
    q = sign * (ell * model.drift + c_s_ell)

    if isinstance(cone, (FullSpace, LinearSpan)):
        basis = np.eye(model.dim) if isinstance(cone, FullSpace) else cone.basis
        if basis.shape[1] == 0:
            return _zero_minimum(model.dim)
        weights = _range_solve(basis.T @ hess @ basis, -(basis.T @ q))
        if weights is None:
            logger.warning("Quadratic g is unbounded below on the subspace")
            return ConeMinimum(np.zeros(model.dim), float("-inf"), MinimizerStatus.UNBOUNDED)
        psi = basis @ weights
    else:
        gens = cone.generators()
        if gens is None:
            return None
        h = gens.T @ q
        if gens.shape[1] == 0 or np.all(h >= 0.0):
            return _zero_minimum(model.dim)
        gram = gens.T @ hess @ gens
        eigvals, eigvecs = np.linalg.eigh(0.5 * (gram + gram.T))
        keep = eigvals > 1e-12 * max(float(np.max(np.abs(eigvals))), 1e-300)
        factor = np.sqrt(eigvals[keep])[:, None] * eigvecs[:, keep].T   # factor'factor = gram
        if factor.shape[0] == 0:
            return None
        target = _range_solve(factor.T, h)
        if target is None:
            return None
        try:
            weights, _ = nnls(factor, -target, maxiter=100 * gens.shape[1])
        except RuntimeError as e:
            logger.error(f"Active-set solve failed: {e}")
            raise NotConverged(str(e)) from e
        psi = gens @ weights

    evaluation = eval_g(sign, psi, model, jc)
    if evaluation.g > 0.0 or not np.any(psi):
        return _zero_minimum(model.dim)
    return ConeMinimum(psi, evaluation.g, _classify(psi, evaluation.gradient, opts))


def _curvature(hess: np.ndarray) -> float:
    eig_max = float(np.linalg.eigvalsh(0.5 * (hess + hess.T))[-1])
    return eig_max if eig_max > 1e-12 else 1.0


class _Diverged(Exception):
    """Raised from inside an objective once the iterate norm passes the cap"""

    def __init__(self, point: np.ndarray, value: float):
        super().__init__("iterate diverged")
        self.point = point
        self.value = value


@dataclass
class _Descent:
    point: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int


Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def _descend(objective: Objective, project: Callable[[np.ndarray], np.ndarray], point: np.ndarray,
             curvature: float, opts: MinimizeOptions) -> _Descent:
    """
    Projected gradient descent with Barzilai-Borwein steps and Armijo
    backtracking.  Steps are kept as curvature estimates and the update is
    x - grad / curvature.  The objective raises _Diverged past the cap.
    """
    value, grad = objective(point)

    for iteration in range(opts.max_iter):
        residual = float(np.linalg.norm(point - project(point - grad)))
        if residual <= opts.tol:
            return _Descent(point, value, grad, iteration)

        for _ in range(opts.max_backtracks):
            trial = project(point - grad / curvature)
            trial_value, trial_grad = objective(trial)
            if trial_value <= value + opts.armijo * float(grad @ (trial - point)):
                break
            curvature *= 2.0
        else:
            if residual <= opts.stall_factor * opts.tol:
                logger.debug(f"PGD stalled at residual {residual:.3e}, accepting")
                return _Descent(point, value, grad, iteration)
            raise NotConverged(f"line search failed with first-order residual {residual:.3e}")

        step = trial - point
        grad_change = trial_grad - grad
        point, value, grad = trial, trial_value, trial_grad

        step_sq = float(step @ step)
        curv = float(step @ grad_change)
        if step_sq > 0.0 and curv > 0.0:
            curvature = curv / step_sq
        else:
            # linear along the last step
            curvature *= 0.25

    residual = float(np.linalg.norm(point - project(point - grad)))
    if residual <= opts.stall_factor * opts.tol:
        return _Descent(point, value, grad, opts.max_iter)
    raise NotConverged(f"no first-order point after {opts.max_iter} iterations (residual {residual:.3e})")


def _psi_objective(sign: int, model: LevyModel, jc: JointCharacteristics, gens: Optional[np.ndarray],
                   opts: MinimizeOptions) -> Objective:
    """g as a function of psi, or of the generator weights w with psi = gens @ w"""
    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        psi = x if gens is None else gens @ x
        evaluation = eval_g(sign, psi, model, jc)
        if evaluation.g < 0.0 and np.linalg.norm(psi) > opts.divergence_cap:
            raise _Diverged(psi, evaluation.g)
        grad = evaluation.gradient if gens is None else gens.T @ evaluation.gradient
        return evaluation.g, grad
    return objective


def _unbounded(diverged: _Diverged, opts: MinimizeOptions) -> ConeMinimum:
    logger.warning(f"Minimizer diverged: |psi| > {opts.divergence_cap:g} with g = {diverged.value:.3e}")
    return ConeMinimum(diverged.point, diverged.value, MinimizerStatus.UNBOUNDED)


def _finish(sign: int, psi: np.ndarray, iterations: int, model: LevyModel, jc: JointCharacteristics,
            opts: MinimizeOptions) -> ConeMinimum:
    evaluation = eval_g(sign, psi, model, jc)
    if evaluation.g > 0.0 or not np.any(psi):
        return ConeMinimum(np.zeros(model.dim), 0.0, MinimizerStatus.AT_ZERO, iterations)
    return ConeMinimum(psi, evaluation.g, _classify(psi, evaluation.gradient, opts), iterations)


def _projected_gradient(sign: int, cone: Cone, model: LevyModel, jc: JointCharacteristics,
                        opts: MinimizeOptions, warm_start: Optional[np.ndarray]) -> ConeMinimum:
    """Descent in psi for cones without a generator matrix (subspaces)"""
    objective = _psi_objective(sign, model, jc, None, opts)
    psi = cone.project(np.zeros(model.dim) if warm_start is None else warm_start)
    if eval_g(sign, psi, model, jc).g > 0.0:
        psi = np.zeros(model.dim)
    curvature = _curvature(hessian_g(sign, psi, model, jc))
    try:
        descent = _descend(objective, cone.project, psi, curvature, opts)
    except _Diverged as e:
        return _unbounded(e, opts)
    return _finish(sign, descent.point, descent.iterations, model, jc, opts)


def _start_weights(gens: np.ndarray, warm_start: Optional[np.ndarray]) -> np.ndarray:
    if warm_start is None or not np.any(warm_start):
        return np.zeros(gens.shape[1])
    try:
        weights, _ = nnls(gens, warm_start, maxiter=100 * gens.shape[1])
    except RuntimeError:
        return np.zeros(gens.shape[1])
    return weights


def _generator_descent(sign: int, gens: np.ndarray, model: LevyModel, jc: JointCharacteristics,
                       opts: MinimizeOptions, warm_start: Optional[np.ndarray]) -> ConeMinimum:
    """
    Minimize over psi = gens @ w with w >= 0, where projection is a clip.

    L-BFGS-B does the bulk of the work; projected gradient in the weights
    then drives the first-order residual below tol.
    """
    k = gens.shape[1]
    if k == 0:
        return _zero_minimum(model.dim)
    objective = _psi_objective(sign, model, jc, gens, opts)
    clip = partial(np.maximum, 0.0)

    weights = _start_weights(gens, warm_start)
    if objective(weights)[0] > 0.0:
        weights = np.zeros(k)

    try:
        result = minimize(objective, weights, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * k,
                          options={"maxiter": opts.max_iter, "ftol": 0.0, "gtol": opts.tol})
        weights = clip(result.x)
        iterations = int(result.nit)
        hess = gens.T @ hessian_g(sign, gens @ weights, model, jc) @ gens
        descent = _descend(objective, clip, weights, _curvature(hess), opts)
    except _Diverged as e:
        return _unbounded(e, opts)
    return _finish(sign, gens @ descent.point, iterations + descent.iterations, model, jc, opts)


def minimize_g(sign: Sign, cone: Cone, model: LevyModel, jc: JointCharacteristics,
               opts: Optional[MinimizeOptions] = None, warm_start=None) -> ConeMinimum:
    """
    Minimize g over the cone.

    Continuous models are solved in closed form where the cone allows it.
    Otherwise cones with generators are searched over nonnegative generator
    weights and subspaces by projected gradient descent in psi, both from 0
    (or the warm start).  Divergence is reported as status Unbounded, not
    raised.
    """
    s = parse_sign(sign)
    opts = opts or DEFAULT_OPTIONS
    if cone.dim != model.dim:
        raise OutOfRange(f"cone dimension {cone.dim} differs from model dimension {model.dim}", field="cone")
    if isinstance(cone, ZeroCone):
        return _zero_minimum(model.dim)

    if model.is_continuous:
        result = _closed_form(s, cone, model, jc, opts)
        if result is not None:
            return result

    if warm_start is not None:
        warm_start = as_vector(warm_start, model.dim, "warm_start")
    gens = cone.generators()
    if gens is not None:
        return _generator_descent(s, gens, model, jc, opts, warm_start)
    return _projected_gradient(s, cone, model, jc, opts, warm_start)


def drift_of_J(v_plus: float, v_minus: float, at_zero: bool, psi, model: LevyModel,
               jc: JointCharacteristics) -> float:
    """
    Drift rate of J = (V+)^2 l+ + (V-)^2 l- for the wealth state described by
    exactly one of v_plus > 0, v_minus > 0 and at_zero.
    """
    if v_plus < 0.0 or v_minus < 0.0:
        raise InvalidState("v_plus and v_minus must be nonnegative", field="state")
    if int(v_plus > 0.0) + int(v_minus > 0.0) + int(bool(at_zero)) != 1:
        raise InvalidState("exactly one of v_plus > 0, v_minus > 0, at_zero must hold", field="state")
    psi = as_vector(psi, model.dim, "psi")

    if v_plus > 0.0:
        return v_plus ** 2 * (eval_g(1, psi, model, jc).g + jc.b_ell_plus)
    if v_minus > 0.0:
        return v_minus ** 2 * (eval_g(-1, psi, model, jc).g + jc.b_ell_minus)

    drift = jc.ell_minus_left * float(psi @ model.diffusion @ psi)
    if not model.is_continuous:
        a = model.jump_sizes @ psi
        lam = model.jump_intensities
        marks = jc.jump_marks
        drift += float(np.sum(lam * np.maximum(a, 0.0) ** 2 * (jc.ell_plus_left + marks[:, 0])))
        drift += float(np.sum(lam * np.maximum(-a, 0.0) ** 2 * (jc.ell_minus_left + marks[:, 1])))
    return drift


def no_shortselling_minimizer(model: LevyModel, ell_minus: float = 1.0) -> np.ndarray:
    """
    Minimizer of g- over the nonnegative orthant for a continuous model with
    nonsingular diffusion: (sigma')^{-1} applied to the projection of
    sigma^{-1} b onto sigma' R^d_+, where c = sigma sigma'.

    The minimizer does not depend on the level of l-.
    """
    if not model.is_continuous:
        raise ConfigError("closed form applies to continuous models only", field="model.jumps")
    if not (0.0 < ell_minus <= 1.0):
        raise OutOfRange(f"must lie in (0, 1], got {ell_minus}", field="ell_minus")
    try:
        sigma = np.linalg.cholesky(model.diffusion)
    except np.linalg.LinAlgError as e:
        raise NotPSD("diffusion must be nonsingular for the no-shortselling formula", field="diffusion") from e

    market_price = solve_triangular(sigma, model.drift, lower=True)
    image = NonnegativeOrthant(model.dim).linear_image(sigma.T)
    projected = image.project(market_price)
    return solve_triangular(sigma.T, projected, lower=False)
