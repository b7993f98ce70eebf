import logging
from typing import Tuple, Union

import numpy as np

from .exceptions import DimensionMismatch

logger = logging.getLogger(__name__)

ArrayLike = Union[float, list, tuple, np.ndarray]

# Relative tolerance below which an eigenvalue of a PSD matrix counts as zero
EIG_TOL = 1e-12


def as_vector(value: ArrayLike, dim: int, name: str) -> np.ndarray:
    """Convert input to a float d-vector, accepting scalars when dim == 1"""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1)
    if arr.shape != (dim,):
        raise DimensionMismatch(f"expected shape ({dim},), got {arr.shape}", field=name)
    return arr


def as_matrix(value: ArrayLike, dim: int, name: str) -> np.ndarray:
    """Convert input to a float d×d matrix, accepting scalars when dim == 1"""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (dim, dim):
        raise DimensionMismatch(f"expected shape ({dim}, {dim}), got {arr.shape}", field=name)
    return arr


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """
    Return R (d×r) with matrix = R R^T, keeping only the nonzero spectrum.

    r is the numerical rank, so a zero matrix yields a d×0 factor.
    """
    eigvals, eigvecs = np.linalg.eigh(matrix)
    scale = max(float(np.max(np.abs(eigvals))), 0.0) if eigvals.size else 0.0
    keep = eigvals > EIG_TOL * scale
    if scale == 0.0:
        keep[:] = False
    return eigvecs[:, keep] * np.sqrt(eigvals[keep])


def make_readonly(*arrays: np.ndarray) -> None:
    for arr in arrays:
        arr.setflags(write=False)


def path_rng(seed: int, index: int) -> np.random.Generator:
    """
    Counter-based random stream for one Monte Carlo path.

    Philox is keyed by the seed and the path index occupies the highest
    counter word, so streams never overlap while a path draws fewer than
    2**192 blocks.
    """
    counter = np.array([0, 0, 0, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


def mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    """Sample mean and its standard error (numpy reductions sum pairwise)"""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    if n == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(n))


def sample_variance(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.var(values, ddof=1))


def variance_stderr(values: np.ndarray) -> float:
    """Large-sample standard error of the sample variance, sqrt((m4 - s^4) / n)"""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        return 0.0
    centered = values - np.mean(values)
    m4 = float(np.mean(centered ** 4))
    var = float(np.mean(centered ** 2))
    return float(np.sqrt(max(m4 - var ** 2, 0.0) / n))
