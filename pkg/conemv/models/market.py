"""
Lévy market model and the joint-characteristics bundle fed to the g-functions.

The price process S has differential characteristics (b^S, c^S, F^S) with
respect to the clock B(t) = t and truncation function h(x) = x.  Jump
measures are finite lists of atoms, so every F-integral is an exact sum.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .schemas import ModelSpec
from ..utils.exceptions import (
    ConfigError,
    DimensionMismatch,
    NonpositiveHorizon,
    NonpositiveIntensity,
    NotPSD,
    OutOfRange,
)
from ..utils.helpers import as_matrix, as_vector, make_readonly

logger = logging.getLogger(__name__)

PSD_TOL = 1e-12


@dataclass(frozen=True)
class LevyModel:
    """Differential characteristics of S with B(t) = t"""
    dim: int
    drift: np.ndarray           # b^S, shape (d,)
    diffusion: np.ndarray       # c^S, shape (d, d)
    jump_sizes: np.ndarray      # u_k stacked, shape (K, d)
    jump_intensities: np.ndarray  # lambda_k, shape (K,)
    horizon: float

    @property
    def n_atoms(self) -> int:
        return int(self.jump_intensities.shape[0])

    @property
    def jump_atoms(self) -> List[Tuple[np.ndarray, float]]:
        return [(u, float(lam)) for u, lam in zip(self.jump_sizes, self.jump_intensities)]

    @property
    def is_continuous(self) -> bool:
        return self.n_atoms == 0

    def to_spec(self) -> Dict[str, Any]:
        """JSON document in the model-file format"""
        return {
            "dim": self.dim,
            "drift": self.drift.tolist(),
            "diffusion": self.diffusion.tolist(),
            "jumps": [{"u": u.tolist(), "lambda": lam} for u, lam in self.jump_atoms],
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class JointCharacteristics:
    """
    Per-time inputs of the g-functions.

    jump_marks[k] = (y_k, z_k): the jumps of l+ and l- that occur together
    with the price jump u_k.
    """
    ell_plus_left: float
    ell_minus_left: float
    b_ell_plus: float
    b_ell_minus: float
    c_s_ell_plus: np.ndarray
    c_s_ell_minus: np.ndarray
    jump_marks: np.ndarray      # shape (K, 2)


def build_levy_model(
    dim: int,
    drift: Any,
    diffusion: Any,
    jump_atoms: Iterable[Tuple[Any, float]] = (),
    horizon: float = 1.0,
) -> LevyModel:
    """
    Validate raw characteristics and build an immutable LevyModel.

    The diffusion matrix is symmetrized, checked for positive
    semidefiniteness up to a relative tolerance and then clipped to PSD.
    """
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise DimensionMismatch(f"dimension must be a positive integer, got {dim!r}", field="dim")
    dim = int(dim)

    b = as_vector(drift, dim, "drift")
    c = as_matrix(diffusion, dim, "diffusion")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise ConfigError("characteristics must be finite", field="drift/diffusion")

    c = 0.5 * (c + c.T)
    eigvals, eigvecs = np.linalg.eigh(c)
    norm = float(np.max(np.abs(eigvals)))
    if eigvals[0] < -PSD_TOL * norm:
        raise NotPSD(f"smallest eigenvalue {eigvals[0]:.3e} is negative", field="diffusion")
    if eigvals[0] < 0.0:
        c = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        c = 0.5 * (c + c.T)

    sizes: List[np.ndarray] = []
    intensities: List[float] = []
    for k, (u, lam) in enumerate(jump_atoms):
        u_vec = as_vector(u, dim, f"jumps[{k}].u")
        lam = float(lam)
        if not np.isfinite(lam) or lam <= 0.0:
            raise NonpositiveIntensity(f"intensity must be positive, got {lam}", field=f"jumps[{k}].lambda")
        sizes.append(u_vec)
        intensities.append(lam)

    horizon = float(horizon)
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise NonpositiveHorizon(f"horizon must be positive, got {horizon}", field="horizon")

    jump_sizes = np.array(sizes, dtype=float).reshape(len(sizes), dim)
    jump_intensities = np.array(intensities, dtype=float)
    make_readonly(b, c, jump_sizes, jump_intensities)

    logger.debug(f"Built Lévy model: dim={dim}, atoms={len(intensities)}, horizon={horizon}")
    return LevyModel(
        dim=dim,
        drift=b,
        diffusion=c,
        jump_sizes=jump_sizes,
        jump_intensities=jump_intensities,
        horizon=horizon,
    )


def model_from_spec(spec: Union[Dict[str, Any], ModelSpec]) -> LevyModel:
    """Build a model from its JSON document"""
    if not isinstance(spec, ModelSpec):
        try:
            spec = ModelSpec.model_validate(spec)
        except ValidationError as e:
            err = e.errors()[0]
            field = ".".join(str(part) for part in err["loc"])
            raise ConfigError(err["msg"], field=f"model.{field}") from e

    return build_levy_model(
        dim=spec.dim,
        drift=spec.drift,
        diffusion=spec.diffusion,
        jump_atoms=[(jump.u, jump.lambda_) for jump in spec.jumps],
        horizon=spec.horizon,
    )


def make_joint_characteristics(
    model: LevyModel,
    ell_plus: float,
    ell_minus: float,
    b_ell_plus: float = 0.0,
    b_ell_minus: float = 0.0,
    c_s_ell_plus: Optional[Sequence[float]] = None,
    c_s_ell_minus: Optional[Sequence[float]] = None,
    jump_marks: Optional[Any] = None,
) -> JointCharacteristics:
    """Validate and bundle general joint characteristics of (S, l+, l-)"""
    for name, value in (("ell_plus", ell_plus), ("ell_minus", ell_minus)):
        if not (0.0 < value <= 1.0):
            raise OutOfRange(f"must lie in (0, 1], got {value}", field=name)

    d, k = model.dim, model.n_atoms
    c_plus = np.zeros(d) if c_s_ell_plus is None else as_vector(c_s_ell_plus, d, "c_s_ell_plus")
    c_minus = np.zeros(d) if c_s_ell_minus is None else as_vector(c_s_ell_minus, d, "c_s_ell_minus")
    marks = np.zeros((k, 2)) if jump_marks is None else np.asarray(jump_marks, dtype=float).reshape(-1, 2)
    if marks.shape != (k, 2):
        raise DimensionMismatch(f"expected {k} mark pairs, got {marks.shape[0]}", field="jump_marks")
    if np.any(ell_plus + marks[:, 0] < 0.0) or np.any(ell_minus + marks[:, 1] < 0.0):
        raise OutOfRange("post-jump values of l+/l- must stay nonnegative", field="jump_marks")

    make_readonly(c_plus, c_minus, marks)
    return JointCharacteristics(
        ell_plus_left=float(ell_plus),
        ell_minus_left=float(ell_minus),
        b_ell_plus=float(b_ell_plus),
        b_ell_minus=float(b_ell_minus),
        c_s_ell_plus=c_plus,
        c_s_ell_minus=c_minus,
        jump_marks=marks,
    )


def deterministic_joint_characteristics(
    model: LevyModel,
    ell_plus: float,
    ell_minus: float,
    dell_plus_dt: float = 0.0,
    dell_minus_dt: float = 0.0,
) -> JointCharacteristics:
    """
    Joint characteristics when l+ and l- are deterministic and absolutely
    continuous: no covariation with S and no co-jumps.
    """
    return make_joint_characteristics(
        model,
        ell_plus,
        ell_minus,
        b_ell_plus=dell_plus_dt,
        b_ell_minus=dell_minus_dt,
    )


def second_moment(model: LevyModel) -> np.ndarray:
    """Jump second moment: sum_k lambda_k u_k u_k^T"""
    u = model.jump_sizes
    moment = (u.T * model.jump_intensities) @ u
    return 0.5 * (moment + moment.T)


def martingale_covariance(model: LevyModel) -> np.ndarray:
    """Density of <M> with respect to B(t) = t (no predictable jumps of B)"""
    return model.diffusion + second_moment(model)


def modified_characteristics(
    model: LevyModel, jc: Optional[JointCharacteristics] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Modified drift and covariance (b_bar, c_bar) of the unconstrained problem,
    using the l+ side of jc as the common opportunity process.
    """
    if jc is None:
        return model.drift.copy(), martingale_covariance(model)

    ell = jc.ell_plus_left
    y = jc.jump_marks[:, 0]
    u = model.jump_sizes
    lam = model.jump_intensities

    c_bar = model.diffusion + (u.T * (lam * (1.0 + y / ell))) @ u
    b_bar = model.drift + jc.c_s_ell_plus / ell + u.T @ (lam * y / ell)
    return b_bar, 0.5 * (c_bar + c_bar.T)
