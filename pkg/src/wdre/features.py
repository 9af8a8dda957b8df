"""Quadratic feature transform and flat/matrix parameter views.

The ratio model is log-linear in the pairwise monomials x_i * x_j with
i <= j, so an input of dimension m expands into d = (m^2 + m) / 2 features.
This module owns the bookkeeping between the flat parameter vector of
length d and the symmetric m x m coefficient matrix it represents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FeatureMap",
    "ParamVector",
    "feature_dim",
    "feature_eval",
    "feature_matrix",
    "theta_from_matrix",
    "matrix_from_theta",
]

CONVENTIONS = ("direct", "sum-split")


def feature_dim(m: int) -> int:
    """Feature dimension (m^2 + m) / 2 of the pairwise monomial map."""
    if int(m) != m or m < 1:
        raise ValueError(f"input dimension must be a positive integer, got {m!r}")
    m = int(m)
    return (m * m + m) // 2


@dataclass(frozen=True)
class FeatureMap:
    """Monomial features h_t(x) = x_i * x_j over ordered pairs i <= j.

    Pairs are enumerated row-major: (0,0), (0,1), ..., (0,m-1), (1,1), ...,
    (m-1,m-1), which fixes the bijection between flat index t and (i, j).
    """

    m: int
    row: np.ndarray = field(init=False, repr=False, compare=False)
    col: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        feature_dim(self.m)
        row, col = np.triu_indices(self.m)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)

    @property
    def d(self) -> int:
        return (self.m * self.m + self.m) // 2

    def pair_of(self, t: int) -> tuple[int, int]:
        """Ordered pair (i, j) behind flat feature index t."""
        if not 0 <= t < self.d:
            raise IndexError(f"feature index {t} out of range for d={self.d}")
        return int(self.row[t]), int(self.col[t])

    def index_of(self, i: int, j: int) -> int:
        """Flat feature index of the ordered pair (i, j) with i <= j."""
        if not 0 <= i <= j < self.m:
            raise IndexError(f"pair ({i}, {j}) is not an ordered pair for m={self.m}")
        return i * self.m - (i * (i - 1)) // 2 + (j - i)


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector tied to a FeatureMap.

    The support is structural: exactly the coordinates stored as nonzero,
    with no epsilon thresholding at this layer.
    """

    theta: np.ndarray
    feature_map: FeatureMap

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.feature_map.d,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.feature_map.d},)"
            )
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta != 0.0)


def feature_eval(fmap: FeatureMap, x) -> np.ndarray:
    """Evaluate h(x) for a single length-m input."""
    x = np.asarray(x, dtype=float)
    if x.shape != (fmap.m,):
        raise ValueError(f"input has shape {x.shape}, expected ({fmap.m},)")
    return x[fmap.row] * x[fmap.col]


def feature_matrix(fmap: FeatureMap, X) -> np.ndarray:
    """Row-wise h over an (n, m) sample matrix, returning (n, d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fmap.m:
        raise ValueError(f"samples have shape {X.shape}, expected (n, {fmap.m})")
    return X[:, fmap.row] * X[:, fmap.col]


def theta_from_matrix(fmap: FeatureMap, Theta, convention: str = "direct") -> ParamVector:
    """Flatten a symmetric coefficient matrix into a parameter vector.

    direct:    theta_t = Theta[i, j] for the (i, j) behind t.
    sum-split: theta_t = Theta[i, j] off the diagonal and Theta[i, i] / 2 on
               it, so sum_{i<=j} theta_ij x_i x_j equals x' Theta x / 2.

    Both conventions put nonzeros at exactly the same indices, so support
    readout does not depend on the choice.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}, expected one of {CONVENTIONS}")
    Theta = np.asarray(Theta, dtype=float)
    if Theta.shape != (fmap.m, fmap.m):
        raise ValueError(f"matrix has shape {Theta.shape}, expected ({fmap.m}, {fmap.m})")
    if not (Theta == Theta.T).all():
        raise ValueError("coefficient matrix must be exactly symmetric")
    vals = Theta[fmap.row, fmap.col].copy()
    if convention == "sum-split":
        vals[fmap.row == fmap.col] /= 2.0
    return ParamVector(vals, fmap)


def matrix_from_theta(fmap: FeatureMap, theta, convention: str = "direct") -> np.ndarray:
    """Rebuild the symmetric coefficient matrix; inverse of theta_from_matrix."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}, expected one of {CONVENTIONS}")
    if isinstance(theta, ParamVector):
        theta = theta.theta
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (fmap.d,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({fmap.d},)")
    vals = theta.copy()
    if convention == "sum-split":
        vals[fmap.row == fmap.col] *= 2.0
    out = np.zeros((fmap.m, fmap.m))
    out[fmap.row, fmap.col] = vals
    out[fmap.col, fmap.row] = vals
    return out
