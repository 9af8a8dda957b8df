"""Numeric audits of the conditions behind robust sparse recovery.

Three groups of checks:

* Outlier leverage statistics nu_1..nu_6: maxima of weighted quantities
  over the labeled outliers, with the max over the parameter set resolved
  exactly for a coordinate box. Carried in the log domain because a
  well-chosen weight drives them to numerical zero (log nu around -5e6 for
  the default outlier location), and a badly chosen one to overflow.

* Fisher-information audits at a reference parameter: smallest eigenvalue
  of the active block and the incoherence norm ||I_{S^c S} I_SS^{-1}||_inf
  that limits how strongly inactive features load on active ones.

* Support metrics comparing a fitted parameter against a known truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datagen import LabeledDataset
from .features import FeatureMap, ParamVector, feature_matrix
from .model import ObjectiveSpec, PrecomputedFeatures, fisher_info
from .weights import WeightFn, log_weights

__all__ = [
    "ThetaBox",
    "LeverageReport",
    "AssumptionReport",
    "SupportMetrics",
    "leverage_stats",
    "assumption_audit",
    "support_metrics",
]

_NU_NAMES = ("nu1", "nu2", "nu3", "nu4", "nu5", "nu6")


@dataclass(frozen=True)
class ThetaBox:
    """Coordinate-box parameter set {theta : lo_t <= theta_t <= hi_t}.

    A box makes max over theta of exp(theta' h(x)) exactly computable:
    the exponent maximizes coordinate-wise at max(lo_t h_t, hi_t h_t).
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if (lo > hi).any():
            raise ValueError("box needs lo <= hi coordinate-wise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, d: int, bound: float = 1.0) -> "ThetaBox":
        return cls(np.full(d, -bound), np.full(d, bound))

    @classmethod
    def zero(cls, d: int) -> "ThetaBox":
        return cls(np.zeros(d), np.zeros(d))

    def log_exp_max(self, H: np.ndarray) -> np.ndarray:
        """Per-row max over the box of theta' h, i.e. log max exp(theta' h)."""
        return np.maximum(H * self.lo, H * self.hi).sum(axis=1)


@dataclass
class LeverageReport:
    """Outlier leverage maxima, in both plain and log domain."""

    log_nu1: float
    log_nu2: float
    log_nu3: float
    log_nu4: float
    log_nu5: float
    log_nu6: float
    eps: float
    k: int
    n_outliers_p: int
    n_outliers_q: int
    no_outliers: bool

    def log_nu_values(self) -> dict[str, float]:
        return {name: getattr(self, f"log_{name}") for name in _NU_NAMES}

    @property
    def log_nu(self) -> float:
        return max(self.log_nu_values().values())

    def nu_values(self) -> dict[str, float]:
        with np.errstate(over="ignore"):
            return {name: float(np.exp(lv)) for name, lv in self.log_nu_values().items()}

    @property
    def nu(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_nu))

    @property
    def k_eps_nu(self) -> float:
        """Composite k^{3/2} * eps * nu; 0 whenever eps or nu vanishes."""
        if self.eps == 0.0 or self.log_nu == -math.inf:
            return 0.0
        return self.k**1.5 * self.eps * self.nu

    def to_json_dict(self) -> dict:
        out = dict(self.nu_values())
        out.update({f"log_{k}": v for k, v in self.log_nu_values().items()})
        out.update(
            nu=self.nu,
            log_nu=self.log_nu,
            eps=self.eps,
            k=self.k,
            k_eps_nu=self.k_eps_nu,
            n_outliers_p=self.n_outliers_p,
            n_outliers_q=self.n_outliers_q,
            no_outliers=self.no_outliers,
        )
        return out


@dataclass
class AssumptionReport:
    """Fisher-information and boundedness audit at a reference parameter."""

    min_eig_SS: float
    incoherence: float | None
    alpha_implied: float | None
    log_max_weighted_ratio: float
    kappa_hat: float
    not_computable: dict[str, str]

    @property
    def max_weighted_ratio(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_max_weighted_ratio))

    def to_json_dict(self) -> dict:
        return {
            "min_eig_SS": self.min_eig_SS,
            "incoherence": self.incoherence,
            "alpha_implied": self.alpha_implied,
            "max_weighted_ratio": self.max_weighted_ratio,
            "log_max_weighted_ratio": self.log_max_weighted_ratio,
            "kappa_hat": self.kappa_hat,
            "not_computable": self.not_computable,
        }


@dataclass(frozen=True)
class SupportMetrics:
    exact_recovery: bool
    signed_recovery: bool | None
    l2_error: float

    def to_json_dict(self) -> dict:
        return {
            "exact_recovery": self.exact_recovery,
            "signed_recovery": self.signed_recovery,
            "l2_error": self.l2_error,
        }


def _max_or_neginf(values: np.ndarray) -> float:
    return float(values.max()) if values.size else -math.inf


def leverage_stats(
    reference: LabeledDataset,
    target: LabeledDataset,
    weight: WeightFn,
    fmap: FeatureMap,
    theta_box: ThetaBox | None = None,
    support=None,
) -> LeverageReport:
    """Leverage maxima over the labeled outliers of both datasets.

    nu1, nu3 range over reference-side outliers; nu2, nu4, nu5, nu6 over
    target-side outliers with the parameter max resolved over theta_box
    (default: the unit box). nu6 restricts two of its feature indices to
    `support`; without a support it falls back to all indices, an upper
    bound. With no labeled outliers anywhere, every nu is zero and the
    report says so via no_outliers.
    """
    if theta_box is None:
        theta_box = ThetaBox.symmetric(fmap.d)
    if theta_box.lo.shape != (fmap.d,):
        raise ValueError(f"theta_box must have length d={fmap.d}")
    out_p = reference.outliers()
    out_q = target.outliers()
    k = fmap.d if support is None else len(np.asarray(support))
    eps = max(
        reference.n_outlier / reference.n if reference.n else 0.0,
        target.n_outlier / target.n if target.n else 0.0,
    )

    with np.errstate(divide="ignore"):  # log of exact-zero features is -inf
        if out_p.size:
            Hp = feature_matrix(fmap, out_p)
            lw_p = log_weights(weight, out_p)
            log_nu1 = _max_or_neginf(lw_p)
            log_nu3 = _max_or_neginf(lw_p + np.log(np.abs(Hp)).max(axis=1))
        else:
            log_nu1 = log_nu3 = -math.inf
        if out_q.size:
            Hq = feature_matrix(fmap, out_q)
            lw_q = log_weights(weight, out_q)
            box = theta_box.log_exp_max(Hq)
            log_abs = np.log(np.abs(Hq))
            row_max = log_abs.max(axis=1)
            if support is None:
                row_max_S = row_max
            else:
                support = np.asarray(support, dtype=int)
                row_max_S = log_abs[:, support].max(axis=1) if support.size else np.full(len(out_q), -math.inf)
            log_nu2 = _max_or_neginf(box + lw_q)
            log_nu4 = _max_or_neginf(box + lw_q + row_max)
            log_nu5 = _max_or_neginf(box + lw_q + 2.0 * row_max)
            log_nu6 = _max_or_neginf(box + lw_q + row_max + 2.0 * row_max_S)
        else:
            log_nu2 = log_nu4 = log_nu5 = log_nu6 = -math.inf

    return LeverageReport(
        log_nu1=log_nu1,
        log_nu2=log_nu2,
        log_nu3=log_nu3,
        log_nu4=log_nu4,
        log_nu5=log_nu5,
        log_nu6=log_nu6,
        eps=eps,
        k=k,
        n_outliers_p=reference.n_outlier,
        n_outliers_q=target.n_outlier,
        no_outliers=(out_p.size == 0 and out_q.size == 0),
    )


def _incoherence_from_info(info: np.ndarray, support: np.ndarray) -> tuple[float, float | None, str | None]:
    """(min eigenvalue of I_SS, ||I_{S^c S} I_SS^{-1}||_inf or None, reason)."""
    d = info.shape[0]
    support = np.asarray(support, dtype=int)
    inactive = np.setdiff1d(np.arange(d), support)
    A = info[np.ix_(support, support)]
    min_eig = float(np.linalg.eigvalsh(A)[0])
    if inactive.size == 0:
        return min_eig, 0.0, None
    if min_eig < 1e-12:
        return min_eig, None, "active Fisher block is numerically singular"
    # X = I_SS^{-1} I_{S S^c}; the norm is the max column sum of |X|.
    X = np.linalg.solve(A, info[np.ix_(support, inactive)])
    return min_eig, float(np.abs(X).sum(axis=0).max()), None


def assumption_audit(
    spec: ObjectiveSpec,
    features: PrecomputedFeatures,
    theta_star,
    support,
) -> AssumptionReport:
    """Eigenvalue, incoherence, and boundedness audit at theta_star.

    Never fails because a condition is violated; it reports the numbers.
    A singular active block marks the incoherence as not computable.
    """
    support = np.asarray(support, dtype=int)
    if support.size == 0:
        raise ValueError("assumption audit needs a non-empty support")
    if isinstance(theta_star, ParamVector):
        theta_star = theta_star.theta
    info = fisher_info(spec, features, theta_star)
    min_eig, incoherence, reason = _incoherence_from_info(info, support)
    not_computable = {} if reason is None else {"incoherence": reason}
    scores = np.concatenate(
        [
            features.Hp @ theta_star + features.logw_p,
            features.Hq @ theta_star + features.logw_q,
        ]
    )
    return AssumptionReport(
        min_eig_SS=min_eig,
        incoherence=incoherence,
        alpha_implied=None if incoherence is None else 1.0 - incoherence,
        log_max_weighted_ratio=float(scores.max()),
        kappa_hat=features.kappa_hat,
        not_computable=not_computable,
    )


def support_metrics(theta_hat, true_support, theta_star=None) -> SupportMetrics:
    """Compare a fitted parameter's structural support against the truth.

    exact_recovery reads set equality of supports; signed_recovery (only
    when theta_star is given) additionally requires sign agreement on the
    true support; l2_error is ||theta_hat - theta_star||_2 when available.
    """
    if isinstance(theta_hat, ParamVector):
        theta_hat = theta_hat.theta
    theta_hat = np.asarray(theta_hat, dtype=float)
    true_support = set(int(t) for t in np.asarray(true_support, dtype=int))
    fitted = set(int(t) for t in np.flatnonzero(theta_hat != 0.0))
    exact = fitted == true_support
    signed = None
    l2 = math.nan
    if theta_star is not None:
        if isinstance(theta_star, ParamVector):
            theta_star = theta_star.theta
        theta_star = np.asarray(theta_star, dtype=float)
        if theta_star.shape != theta_hat.shape:
            raise ValueError("theta_hat and theta_star must share a feature map")
        idx = sorted(true_support)
        signed = exact and bool(
            (np.sign(theta_hat[idx]) == np.sign(theta_star[idx])).all()
        )
        l2 = float(np.linalg.norm(theta_hat - theta_star))
    return SupportMetrics(exact_recovery=exact, signed_recovery=signed, l2_error=l2)
