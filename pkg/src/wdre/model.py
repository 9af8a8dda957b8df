"""Unnormalized-KL fitting objective, plain or weighted, with derivatives.

The objective over a reference sample {x_n^p} and a target sample {x_n^q} is

    L(theta) = -E_p[theta' h(X) w(X)] + E_p[w(X)] * log E_q[exp(theta' h(X)) w(X)]

with E_* the empirical means. Every target-side quantity is driven by the
per-sample scores a_n = theta' h(x_n^q) + log w(x_n^q) through a
max-subtracted log-sum-exp, so the code stays finite even when
exp(theta' h) alone would overflow by thousands of orders of magnitude or
the weight alone would underflow. The reference side only enters through
the linear statistics E_p[w] and E_p[h w], precomputed once per dataset.

The conventional (unweighted) objective is the weighted one evaluated with
the constant unit weight; both run through the same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureMap, feature_matrix
from .weights import WeightFn, log_weights

__all__ = [
    "DegenerateWeightError",
    "ObjectiveSpec",
    "PrecomputedFeatures",
    "precompute",
    "normalizing_term",
    "log_normalizing_term",
    "objective",
    "gradient",
    "objective_and_gradient",
    "hessian",
    "fisher_info",
]

METHODS = ("conventional-dre", "weighted-dre")

# Dense d x d curvature matrices are diagnostics-only; refuse to materialize
# anything bigger than this without an explicit override.
HESSIAN_DIM_GUARD = 10_000


class DegenerateWeightError(ValueError):
    """The weight function annihilates an entire sample set."""


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which objective to fit: plain or weighted, over which feature map."""

    method: str
    weight: WeightFn
    feature_map: FeatureMap

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.method == "conventional-dre":
            if self.weight.kind != "constant" or self.weight.amplitude != 1.0:
                raise ValueError("conventional-dre runs with the constant unit weight")

    @classmethod
    def conventional(cls, feature_map: FeatureMap) -> "ObjectiveSpec":
        return cls("conventional-dre", WeightFn.constant(1.0), feature_map)

    @classmethod
    def weighted(cls, feature_map: FeatureMap, weight: WeightFn) -> "ObjectiveSpec":
        return cls("weighted-dre", weight, feature_map)


@dataclass(frozen=True)
class PrecomputedFeatures:
    """Feature matrices and weight statistics fixed for one dataset pair."""

    Hp: np.ndarray        # (n_p, d) features over the reference set
    Hq: np.ndarray        # (n_q, d) features over the target set
    logw_p: np.ndarray    # per-sample log weights, reference side
    logw_q: np.ndarray    # per-sample log weights, target side
    hw_p_mean: np.ndarray  # E_p[h(X) w(X)], length d
    kappa_hat: float       # E_p[w(X)], strictly positive

    @property
    def n_p(self) -> int:
        return self.Hp.shape[0]

    @property
    def n_q(self) -> int:
        return self.Hq.shape[0]

    @property
    def d(self) -> int:
        return self.Hp.shape[1]


def precompute(spec: ObjectiveSpec, x_p, x_q) -> PrecomputedFeatures:
    """Build the per-dataset statistics that every evaluation reuses.

    Memory is O(n * d) for the two feature matrices; the solver trades that
    for objective and gradient evaluations that are pure BLAS passes.
    """
    x_p = _as_samples(x_p, spec.feature_map.m, "reference")
    x_q = _as_samples(x_q, spec.feature_map.m, "target")
    Hp = feature_matrix(spec.feature_map, x_p)
    Hq = feature_matrix(spec.feature_map, x_q)
    logw_p = log_weights(spec.weight, x_p)
    logw_q = log_weights(spec.weight, x_q)
    with np.errstate(under="ignore"):
        wp = np.exp(logw_p)
    kappa_hat = float(wp.mean())
    if kappa_hat <= 0.0:
        raise DegenerateWeightError(
            "weight underflows on every reference sample: E_p[w] = 0"
        )
    hw_p_mean = (Hp.T @ wp) / Hp.shape[0]
    return PrecomputedFeatures(Hp, Hq, logw_p, logw_q, hw_p_mean, kappa_hat)


def _as_samples(x, m: int, side: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != m:
        raise ValueError(f"{side} set must be an (n, {m}) matrix, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError(f"{side} set is empty")
    return x


def _check_theta(features: PrecomputedFeatures, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.d,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({features.d},)")
    return theta


def _target_scores(features: PrecomputedFeatures, theta: np.ndarray) -> np.ndarray:
    """a_n = theta' h(x_n^q) + log w(x_n^q); gathers columns when theta is sparse."""
    nz = np.flatnonzero(theta)
    if nz.size == 0:
        return features.logw_q.copy()
    if nz.size <= features.d // 4:
        return features.Hq[:, nz] @ theta[nz] + features.logw_q
    return features.Hq @ theta + features.logw_q


def _shifted_exp(a: np.ndarray) -> tuple[float, np.ndarray, float]:
    """(max, exp(a - max), sum of exps); errors when every score is -inf."""
    amax = float(np.max(a))
    if amax == -math.inf:
        raise DegenerateWeightError("weight annihilates the entire target set")
    with np.errstate(under="ignore"):
        e = np.exp(a - amax)
    return amax, e, float(e.sum())


def _log_mean_exp(a: np.ndarray) -> float:
    amax, _, tot = _shifted_exp(a)
    return amax + math.log(tot) - math.log(len(a))


def log_normalizing_term(spec: ObjectiveSpec, features: PrecomputedFeatures, theta) -> float:
    """log of kappa_hat / E_q[exp(theta' h) w], exact in the log domain."""
    theta = _check_theta(features, theta)
    return math.log(features.kappa_hat) - _log_mean_exp(_target_scores(features, theta))


def normalizing_term(spec: ObjectiveSpec, features: PrecomputedFeatures, theta) -> float:
    """Profiled-out multiplicative constant C = kappa_hat / E_q[exp(theta' h) w].

    Strictly positive; may overflow to inf if the weight all but annihilates
    the target set, in which case log_normalizing_term stays exact.
    """
    with np.errstate(over="ignore"):
        return float(np.exp(log_normalizing_term(spec, features, theta)))


def objective(spec: ObjectiveSpec, features: PrecomputedFeatures, theta) -> float:
    """L(theta); convex in theta, finite for finite inputs."""
    theta = _check_theta(features, theta)
    lme = _log_mean_exp(_target_scores(features, theta))
    return float(-theta @ features.hw_p_mean + features.kappa_hat * lme)


def gradient(spec: ObjectiveSpec, features: PrecomputedFeatures, theta) -> np.ndarray:
    """grad L(theta) = -E_p[h w] + kappa_hat * sum_n s_n h(x_n^q).

    s is the softmax of the target scores, i.e. the normalized weighted-ratio
    mass each target sample carries at this theta.
    """
    theta = _check_theta(features, theta)
    _, e, tot = _shifted_exp(_target_scores(features, theta))
    s = e / tot
    return -features.hw_p_mean + features.kappa_hat * (features.Hq.T @ s)


def objective_and_gradient(
    spec: ObjectiveSpec, features: PrecomputedFeatures, theta
) -> tuple[float, np.ndarray]:
    """One-pass objective and gradient sharing the softmax work."""
    theta = _check_theta(features, theta)
    amax, e, tot = _shifted_exp(_target_scores(features, theta))
    lme = amax + math.log(tot) - math.log(features.n_q)
    obj = float(-theta @ features.hw_p_mean + features.kappa_hat * lme)
    s = e / tot
    grad = -features.hw_p_mean + features.kappa_hat * (features.Hq.T @ s)
    return obj, grad


def hessian(
    spec: ObjectiveSpec,
    features: PrecomputedFeatures,
    theta,
    max_dim: int = HESSIAN_DIM_GUARD,
) -> np.ndarray:
    """Dense d x d curvature: kappa_hat times a softmax-weighted covariance.

    Symmetric and positive semidefinite up to eigensolver roundoff. Guarded
    by max_dim because the solver never needs it; only diagnostics do.
    """
    theta = _check_theta(features, theta)
    if features.d > max_dim:
        raise ValueError(
            f"d={features.d} exceeds the dense-Hessian guard (max_dim={max_dim}); "
            "use the gradient-only paths"
        )
    _, e, tot = _shifted_exp(_target_scores(features, theta))
    s = e / tot
    mu = features.Hq.T @ s
    second = features.Hq.T @ (features.Hq * s[:, None])
    H = features.kappa_hat * (second - np.outer(mu, mu))
    return (H + H.T) / 2.0


def fisher_info(
    spec: ObjectiveSpec,
    features: PrecomputedFeatures,
    theta,
    max_dim: int = HESSIAN_DIM_GUARD,
) -> np.ndarray:
    """Empirical weighted Fisher information matrix.

    Identical to the Hessian evaluated at theta; named separately because
    the diagnostics read its (S, S) and (S^c, S) sub-blocks as the objects
    behind the eigenvalue and incoherence audits.
    """
    return hessian(spec, features, theta, max_dim=max_dim)
