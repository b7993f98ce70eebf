"""
Closed convex cones used as trading constraints.

Each variant knows its Euclidean projection.  Polyhedral cones are projected
by nonnegative least squares over the generator weights (Lawson-Hanson
active set from scipy), which terminates finitely for small dimensions.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.optimize import nnls

from .schemas import ConeSpec
from ..utils.exceptions import ConfigError, DimensionMismatch, OutOfRange, ProjectionNotConverged
from ..utils.helpers import as_vector, make_readonly

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
RANK_TOL = 1e-12


class Cone(ABC):
    """A closed convex cone K in R^d"""

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def _project(self, x: np.ndarray) -> np.ndarray:
        ...

    def project(self, x: Any) -> np.ndarray:
        """Euclidean-nearest point of K"""
        return self._project(as_vector(x, self.dim, "x"))

    def contains(self, x: Any, tol: float = DEFAULT_TOL) -> bool:
        x = as_vector(x, self.dim, "x")
        distance = float(np.linalg.norm(x - self._project(x)))
        return distance <= tol * (1.0 + float(np.linalg.norm(x)))

    def generators(self) -> Optional[np.ndarray]:
        """Matrix G (d×k) with K = {G w : w >= 0}, or None for subspaces"""
        return None

    @property
    def is_symmetric(self) -> bool:
        return False

    def linear_image(self, matrix: np.ndarray) -> "Cone":
        """The cone A K for a linear map A (m×d)"""
        gens = self.generators()
        if gens is None:
            raise NotImplementedError(f"linear image of {type(self).__name__} is not supported")
        return Polyhedral.from_generators(np.asarray(matrix, dtype=float) @ gens)


@dataclass(frozen=True, eq=False)
class FullSpace(Cone):
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def _project(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    @property
    def is_symmetric(self) -> bool:
        return True

    def linear_image(self, matrix: np.ndarray) -> Cone:
        matrix = np.asarray(matrix, dtype=float)
        return LinearSpan.from_vectors(matrix.T, matrix.shape[0])


@dataclass(frozen=True, eq=False)
class ZeroCone(Cone):
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def _project(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(x)

    def generators(self) -> np.ndarray:
        return np.zeros((self.n, 0))

    @property
    def is_symmetric(self) -> bool:
        return True

    def linear_image(self, matrix: np.ndarray) -> Cone:
        return ZeroCone(np.asarray(matrix).shape[0])


@dataclass(frozen=True, eq=False)
class NonnegativeOrthant(Cone):
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def _project(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def generators(self) -> np.ndarray:
        return np.eye(self.n)


@dataclass(frozen=True, eq=False)
class Ray(Cone):
    direction: np.ndarray

    def __post_init__(self):
        direction = np.array(self.direction, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0 or not np.isfinite(norm):
            raise OutOfRange("ray direction must be a nonzero finite vector", field="cone.data")
        direction = direction / norm
        make_readonly(direction)
        object.__setattr__(self, "direction", direction)

    @property
    def dim(self) -> int:
        return int(self.direction.shape[0])

    def _project(self, x: np.ndarray) -> np.ndarray:
        return max(float(x @ self.direction), 0.0) * self.direction

    def generators(self) -> np.ndarray:
        return self.direction[:, None]


@dataclass(frozen=True, eq=False)
class LinearSpan(Cone):
    """Subspace spanned by the columns of an orthonormal basis (d×k)"""
    basis: np.ndarray

    @classmethod
    def from_vectors(cls, vectors: Any, dim: int) -> "LinearSpan":
        vectors = np.asarray(vectors, dtype=float).reshape(-1, dim)
        if vectors.shape[0] == 0:
            return cls(np.zeros((dim, 0)))
        u, s, _ = np.linalg.svd(vectors.T, full_matrices=False)
        rank = int(np.sum(s > RANK_TOL * max(float(s[0]), 1e-300)))
        return cls(np.ascontiguousarray(u[:, :rank]))

    def __post_init__(self):
        make_readonly(self.basis)

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])

    def _project(self, x: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ x)

    @property
    def is_symmetric(self) -> bool:
        return True

    def linear_image(self, matrix: np.ndarray) -> Cone:
        matrix = np.asarray(matrix, dtype=float)
        return LinearSpan.from_vectors((matrix @ self.basis).T, matrix.shape[0])


@dataclass(frozen=True, eq=False)
class Polyhedral(Cone):
    """Cone generated by the columns of a d×k matrix"""
    gens: np.ndarray
    max_iter_factor: int = 100

    @classmethod
    def from_generators(cls, gens: Any) -> "Polyhedral":
        gens = np.array(gens, dtype=float)
        if gens.ndim != 2:
            raise DimensionMismatch("generators must form a d×k matrix", field="cone.data")
        keep = np.linalg.norm(gens, axis=0) > 0.0
        return cls(np.ascontiguousarray(gens[:, keep]))

    def __post_init__(self):
        make_readonly(self.gens)

    @property
    def dim(self) -> int:
        return int(self.gens.shape[0])

    def _project(self, x: np.ndarray) -> np.ndarray:
        k = self.gens.shape[1]
        if k == 0:
            return np.zeros_like(x)
        try:
            weights, _ = nnls(self.gens, x, maxiter=self.max_iter_factor * k)
        except RuntimeError as e:
            logger.error(f"Polyhedral projection failed: {e}")
            raise ProjectionNotConverged(str(e)) from e
        return self.gens @ weights

    def generators(self) -> np.ndarray:
        return self.gens


@dataclass(frozen=True, eq=False)
class Product(Cone):
    """Cartesian product of cones acting on consecutive coordinate blocks"""
    cones: Tuple[Cone, ...] = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return sum(cone.dim for cone in self.cones)

    def _blocks(self):
        start = 0
        for cone in self.cones:
            yield cone, slice(start, start + cone.dim)
            start += cone.dim

    def _project(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for cone, block in self._blocks():
            out[block] = cone._project(x[block])
        return out

    def generators(self) -> Optional[np.ndarray]:
        parts = [cone.generators() for cone in self.cones]
        if any(part is None for part in parts):
            return None
        gens = np.zeros((self.dim, sum(part.shape[1] for part in parts)))
        col = 0
        for part, (_, block) in zip(parts, self._blocks()):
            gens[block, col:col + part.shape[1]] = part
            col += part.shape[1]
        return gens

    @property
    def is_symmetric(self) -> bool:
        return all(cone.is_symmetric for cone in self.cones)


def contains(cone: Cone, x: Any, tol: float = DEFAULT_TOL) -> bool:
    """True iff the distance from x to K is at most tol·(1 + |x|)"""
    return cone.contains(x, tol)


def project(cone: Cone, x: Any) -> np.ndarray:
    return cone.project(x)


def polar_project(cone: Cone, x: Any) -> np.ndarray:
    """Projection onto the polar cone via the Moreau decomposition"""
    x = as_vector(x, cone.dim, "x")
    return x - cone.project(x)


def _spec_dim(data: Any, dim: Optional[int], kind: str) -> int:
    if data is None:
        if dim is None:
            raise ConfigError(f"{kind} cone needs a dimension", field="cone.data")
        return dim
    if not isinstance(data, int) or data < 1:
        raise ConfigError(f"{kind} cone expects a positive integer dimension", field="cone.data")
    return data


def _spec_array(data: Any, kind: str, ndim: int) -> np.ndarray:
    """Finite numeric cone data of rank ndim"""
    expected = "a vector" if ndim == 1 else "a list of vectors"
    if data is None:
        raise ConfigError(f"{kind} cone needs {expected}", field="cone.data")
    try:
        array = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{kind} cone data is not numeric ({e})", field="cone.data") from e
    if array.ndim != ndim or array.size == 0:
        raise ConfigError(f"{kind} cone expects {expected}", field="cone.data")
    if not np.all(np.isfinite(array)):
        raise ConfigError(f"{kind} cone data must be finite", field="cone.data")
    return array


def cone_from_spec(spec: Union[Dict[str, Any], ConeSpec], dim: Optional[int] = None) -> Cone:
    """Build a cone from its JSON document, checking it against the model dimension"""
    if not isinstance(spec, ConeSpec):
        try:
            spec = ConeSpec.model_validate(spec)
        except ValidationError as e:
            err = e.errors()[0]
            loc = ".".join(str(part) for part in err["loc"])
            raise ConfigError(err["msg"], field=f"cone.{loc}") from e

    kind, data = spec.type, spec.data
    if kind == "full":
        cone: Cone = FullSpace(_spec_dim(data, dim, kind))
    elif kind == "zero":
        cone = ZeroCone(_spec_dim(data, dim, kind))
    elif kind == "orthant":
        cone = NonnegativeOrthant(_spec_dim(data, dim, kind))
    elif kind == "ray":
        cone = Ray(_spec_array(data, kind, 1))
    elif kind == "span":
        vectors = _spec_array(data, kind, 2)
        cone = LinearSpan.from_vectors(vectors, vectors.shape[1])
    elif kind == "polyhedral":
        cone = Polyhedral.from_generators(_spec_array(data, kind, 2).T)
    else:
        if not isinstance(data, list) or not data:
            raise ConfigError("product cone expects a list of cone specs", field="cone.data")
        cone = Product(tuple(cone_from_spec(sub) for sub in data))

    if dim is not None and cone.dim != dim:
        raise DimensionMismatch(f"cone has dimension {cone.dim}, model has {dim}", field="cone")
    return cone

