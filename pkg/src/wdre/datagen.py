"""Synthetic Gaussian data with Huber-style outlier contamination.

Reference and target samples are zero-mean Gaussians specified by their
precision matrices. Contamination replaces a fixed fraction of rows with
draws from a far-away outlier Gaussian (default mean 100 * ones(m), unit
covariance) and keeps per-row provenance labels for diagnostics; the
estimator itself never reads the labels.

Everything is a pure function of (inputs, seed): pass either an integer
seed or a numpy Generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap

__all__ = [
    "GaussianSpec",
    "ContaminationSpec",
    "LabeledDataset",
    "as_rng",
    "sample_gaussian",
    "make_sparse_difference",
    "contaminate",
    "outlier_count",
    "write_dataset_csv",
    "read_dataset_csv",
]

PLACEMENTS = ("off-diagonal-disjoint", "diagonal")
LABELS = ("inlier", "outlier", "unknown")

# Diagonal placement anchors the smaller precision of an active entry here;
# the larger one is 0.4 + |magnitude|, so magnitude +-0.4 yields the
# (0.4, 0.8) / (0.8, 0.4) pairs and the sign picks which side is heavier.
_DIAG_BASE = 0.4


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class GaussianSpec:
    """Zero-mean Gaussian given by its precision matrix (PD certified)."""

    m: int
    precision: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.precision, dtype=float)
        if P.shape != (self.m, self.m):
            raise ValueError(f"precision has shape {P.shape}, expected ({self.m}, {self.m})")
        if not (P == P.T).all():
            raise ValueError("precision matrix must be exactly symmetric")
        object.__setattr__(self, "precision", P)
        _cholesky_or_pivot_error(P)


def _cholesky_or_pivot_error(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pivot = _failing_pivot(P)
        raise ValueError(
            f"precision matrix is not positive definite (leading minor {pivot} fails)"
        ) from None


def _failing_pivot(P: np.ndarray) -> int:
    for j in range(1, P.shape[0] + 1):
        try:
            np.linalg.cholesky(P[:j, :j])
        except np.linalg.LinAlgError:
            return j
    return P.shape[0]


@dataclass(frozen=True)
class ContaminationSpec:
    """Contamination ratios plus the shared outlier distribution.

    outlier_mean / outlier_cov of None default to 100 * ones(m) and I_m,
    resolved against the data dimension when contaminate() runs.
    """

    eps_p: float
    eps_q: float
    outlier_mean: np.ndarray | None = None
    outlier_cov: np.ndarray | None = None

    def __post_init__(self):
        for name, eps in (("eps_p", self.eps_p), ("eps_q", self.eps_q)):
            if not (0 <= eps < 1):
                raise ValueError(f"{name} must lie in [0, 1), got {eps!r}")

    def eps(self, side: str) -> float:
        if side not in ("p", "q"):
            raise ValueError(f"side must be 'p' or 'q', got {side!r}")
        return self.eps_p if side == "p" else self.eps_q

    def resolve_outliers(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        mean = self.outlier_mean
        mean = np.full(m, 100.0) if mean is None else np.asarray(mean, dtype=float)
        if mean.shape != (m,):
            raise ValueError(f"outlier_mean has shape {mean.shape}, expected ({m},)")
        cov = self.outlier_cov
        cov = np.eye(m) if cov is None else np.asarray(cov, dtype=float)
        if cov.shape != (m, m):
            raise ValueError(f"outlier_cov has shape {cov.shape}, expected ({m}, {m})")
        return mean, cov


@dataclass
class LabeledDataset:
    """Sample matrix plus per-row provenance labels.

    Labels are 'inlier' / 'outlier' from the generator, or 'unknown' for
    data read from files without provenance.
    """

    samples: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be (n, m), got shape {self.samples.shape}")
        if self.labels is None:
            self.labels = np.full(self.samples.shape[0], "unknown")
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must align with sample rows")
        bad = set(np.unique(self.labels)) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels: {sorted(bad)}")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def n_inlier(self) -> int:
        return int((self.labels == "inlier").sum())

    @property
    def n_outlier(self) -> int:
        return int((self.labels == "outlier").sum())

    @property
    def has_provenance(self) -> bool:
        return bool((self.labels != "unknown").all())

    def outliers(self) -> np.ndarray:
        return self.samples[self.labels == "outlier"]

    def inliers(self) -> np.ndarray:
        return self.samples[self.labels == "inlier"]


def sample_gaussian(spec: GaussianSpec, n: int, seed) -> np.ndarray:
    """n i.i.d. rows from N(0, precision^{-1}).

    Draws z ~ N(0, I) and solves through the Cholesky factor of the
    precision (x = L^{-T} z with precision = L L'), so the precision is
    never inverted explicitly.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    rng = as_rng(seed)
    L = _cholesky_or_pivot_error(spec.precision)
    z = rng.standard_normal((int(n), spec.m))
    return np.linalg.solve(L.T, z.T).T


def make_sparse_difference(
    m: int, k: int, magnitude: float, placement: str, seed
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision pair (P_p, P_q) whose difference has a sparse support of size k.

    off-diagonal-disjoint: P_p = I; P_q adds symmetric entries of value
    `magnitude` at k random (i, j) pairs drawn over disjoint rows/columns
    (needs 2k <= m). Disjointness plus |magnitude| < 1 keeps P_q diagonally
    dominant, hence PD.

    diagonal: both matrices diagonal, inactive entries 1.0; each active
    entry gets precisions (0.4 + max(-magnitude, 0), 0.4 + max(magnitude, 0))
    so the difference is `magnitude` and its sign decides which side has
    the heavier tail (needs k <= m).

    Returns (P_p, P_q, support) with the support as sorted flat feature
    indices of the difference's upper triangle.
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"unknown placement {placement!r}, expected one of {PLACEMENTS}")
    if int(m) != m or m < 1 or int(k) != k or k < 0:
        raise ValueError(f"need m >= 1 and k >= 0, got m={m!r}, k={k!r}")
    if k > 0 and magnitude == 0:
        raise ValueError("active entries need a nonzero magnitude")
    rng = as_rng(seed)
    fmap = FeatureMap(m)
    P_p = np.eye(m)
    P_q = np.eye(m)
    if placement == "off-diagonal-disjoint":
        if 2 * k > m:
            raise ValueError(f"off-diagonal placement needs 2k <= m, got k={k}, m={m}")
        chosen = rng.permutation(m)[: 2 * k]
        pairs = [tuple(sorted((int(chosen[2 * i]), int(chosen[2 * i + 1])))) for i in range(k)]
        for i, j in pairs:
            P_q[i, j] = P_q[j, i] = magnitude
    else:
        if k > m:
            raise ValueError(f"diagonal placement needs k <= m, got k={k}, m={m}")
        active = sorted(int(i) for i in rng.permutation(m)[:k])
        pairs = [(i, i) for i in active]
        for i in active:
            P_p[i, i] = _DIAG_BASE + max(-magnitude, 0.0)
            P_q[i, i] = _DIAG_BASE + max(magnitude, 0.0)
    # PD certificate at generation time, not just by construction.
    _cholesky_or_pivot_error(P_p)
    _cholesky_or_pivot_error(P_q)
    support = np.array(sorted(fmap.index_of(i, j) for i, j in pairs), dtype=int)
    return P_p, P_q, support


def outlier_count(eps: float, n: int, round_counts: bool = False) -> int:
    """Number of outlier rows for ratio eps in a dataset of size n.

    eps * n must be integral (up to float roundoff) unless round_counts
    explicitly opts into rounding.
    """
    exact = eps * n
    count = round(exact)
    if not round_counts and abs(exact - count) > 1e-9 * max(1.0, abs(exact)):
        raise ValueError(
            f"eps * n = {eps!r} * {n} = {exact} is not an integer; "
            "choose a grid where it is, or enable rounding"
        )
    return int(count)


def contaminate(
    clean: np.ndarray,
    spec: ContaminationSpec,
    side: str,
    seed,
    round_counts: bool = False,
) -> LabeledDataset:
    """Replace eps * n rows of a clean sample with outlier draws, shuffled.

    The output has the same number of rows as the input; the kept inlier
    rows are unchanged up to the shuffle.
    """
    clean = np.asarray(clean, dtype=float)
    if clean.ndim != 2 or clean.shape[0] == 0:
        raise ValueError(f"clean sample must be a non-empty (n, m) matrix, got {clean.shape}")
    rng = as_rng(seed)
    n, m = clean.shape
    eps = spec.eps(side)
    n_out = outlier_count(eps, n, round_counts)
    mean, cov = spec.resolve_outliers(m)
    L = _cholesky_or_pivot_error(cov)
    outliers = mean + rng.standard_normal((n_out, m)) @ L.T
    samples = np.vstack([clean[: n - n_out], outliers])
    labels = np.concatenate([np.full(n - n_out, "inlier"), np.full(n_out, "outlier")])
    perm = rng.permutation(n)
    return LabeledDataset(samples[perm], labels[perm])


def write_dataset_csv(path, ds: LabeledDataset) -> None:
    """Write `x1,...,xm,label` rows; floats at 17 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(ds.m)) + ",label\n")
        for row, label in zip(ds.samples, ds.labels):
            fh.write(",".join(format(v, ".17g") for v in row) + f",{label}\n")


def read_dataset_csv(path) -> LabeledDataset:
    """Read a dataset written by write_dataset_csv; bit-exact round trip."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if len(cols) < 2 or cols[-1] != "label":
            raise ValueError(f"{path}: malformed header {header!r}")
        m = len(cols) - 1
        if cols[:-1] != [f"x{i + 1}" for i in range(m)]:
            raise ValueError(f"{path}: malformed header {header!r}")
        rows = []
        labels = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != m + 1:
                raise ValueError(f"{path}:{lineno}: expected {m + 1} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts[:-1]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric sample value") from None
            if parts[-1] not in LABELS:
                raise ValueError(f"{path}:{lineno}: unknown label {parts[-1]!r}")
            labels.append(parts[-1])
    if not rows:
        raise ValueError(f"{path}: no sample rows")
    return LabeledDataset(np.array(rows, dtype=float), np.array(labels))
