"""Selection-probability estimation and adversarial weight bounds.

Two routes produce per-sample bounds on the reweighing ratio
v_i = 1 / P(selected | x_i, a_i):

* frequency ratios of discretized points against a pool dataset, with a
  concentration radius eps around the estimate;
* K-means clusters sharing one ratio variable, constrained to a box of
  radius rho around the all-ones ratio.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import EncodedDataset


@dataclass(frozen=True)
class DiscretizationConfig:
    """Binning used to give continuous features countable identities."""

    numeric_bins: int = 8
    include_protected: bool = True

    def __post_init__(self):
        if self.numeric_bins < 1:
            raise ValueError("numeric_bins must be >= 1")
        if not self.include_protected:
            raise ValueError("the protected attribute is always part of the key")


@dataclass
class SelectionEstimate:
    """Per-sample estimated selection probability with its error radius."""

    p_hat: np.ndarray
    epsilon: float
    m_prime: int
    p0: float
    pool_size: int

    def __post_init__(self):
        self.p_hat = np.asarray(self.p_hat, dtype=np.float64)
        if ((self.p_hat <= 0) | (self.p_hat > 1)).any():
            raise ValueError("p_hat entries must lie in (0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")

    @property
    def p_floor(self) -> float:
        return 1.0 / self.pool_size


@dataclass
class ClusterModel:
    """K-means result on the (features-without-bias, protected) coordinates."""

    centroids: np.ndarray
    assignment: np.ndarray
    k: int
    seed: int

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.centroids.shape[0] != self.k:
            raise ValueError("centroids row count must equal k")
        if ((self.assignment < 0) | (self.assignment >= self.k)).any():
            raise ValueError("assignment ids must lie in [0, k)")
        if len(np.unique(self.assignment)) != self.k:
            raise ValueError("model contains an empty cluster")


@dataclass
class RatioBounds:
    """Per-sample interval [lo_i, hi_i] for the adversarial weight v_i.

    ``nominal`` is the point estimate the interval is centered on (1/p_hat
    for the frequency route, 1 for the cluster route); training initializes
    the adversary there. When ``tied_groups`` is present, samples sharing a
    group id share a single LP variable, and lo/hi are constant per group.
    """

    lo: np.ndarray
    hi: np.ndarray
    nominal: np.ndarray
    tied_groups: np.ndarray = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.nominal = np.asarray(self.nominal, dtype=np.float64)
        if (self.lo <= 0).any():
            raise ValueError("lower bounds must be positive")
        if (self.lo > self.hi).any():
            raise ValueError("need lo <= hi elementwise")
        if ((self.nominal < self.lo) | (self.nominal > self.hi)).any():
            raise ValueError("nominal point must lie within [lo, hi]")
        if self.tied_groups is not None:
            self.tied_groups = np.asarray(self.tied_groups, dtype=np.int64)
            for arr in (self.lo, self.hi):
                for g in np.unique(self.tied_groups):
                    vals = arr[self.tied_groups == g]
                    if not (vals == vals[0]).all():
                        raise ValueError("tied groups must share constant bounds")

    @property
    def n_samples(self) -> int:
        return self.lo.shape[0]


def unit_bounds(n: int) -> RatioBounds:
    """Degenerate [1, 1] bounds: training reduces to fixed unit weights."""
    ones = np.ones(n)
    return RatioBounds(lo=ones, hi=ones.copy(), nominal=ones.copy())


def discretize_key(x, a: int, cfg: DiscretizationConfig, numeric_mask=None) -> str:
    """Deterministic text key for one sample.

    Non-numeric coordinates are kept verbatim; numeric ones are floored into
    ``numeric_bins`` buckets (values at 1.0 clamp into the top bucket). The
    protected attribute is appended.
    """
    x = np.asarray(x, dtype=np.float64)
    if numeric_mask is None:
        numeric_mask = np.zeros(x.shape[0], dtype=bool)
    parts = []
    for j, value in enumerate(x):
        if numeric_mask[j]:
            b = min(int(value * cfg.numeric_bins), cfg.numeric_bins - 1)
            parts.append(str(b))
        else:
            parts.append(repr(float(value)))
    parts.append(str(int(a)))
    return "|".join(parts)


def _discretized_matrix(data: EncodedDataset, cfg: DiscretizationConfig) -> np.ndarray:
    """Vectorized counterpart of discretize_key: one row per sample."""
    out = data.features.copy()
    mask = data.numeric_mask
    if mask.any():
        binned = np.minimum(
            np.floor(out[:, mask] * cfg.numeric_bins), cfg.numeric_bins - 1
        )
        out[:, mask] = binned
    return np.column_stack([out, data.protected.astype(np.float64)])


def estimate_density_ratio(
    train: EncodedDataset,
    pool: EncodedDataset,
    cfg: DiscretizationConfig,
    delta: float,
) -> SelectionEstimate:
    """Frequency-ratio estimate of the selection probability per train sample.

    For each training sample with key t, p_hat = (count of t in train) /
    (count of t in pool), clamped into (1/pool_size, 1]. The error radius is

        eps = sqrt((ln(2 m') + ln(1/delta)) / (p0 * pool_size))

    with m' the number of distinct train keys and p0 the smallest empirical
    key frequency in the pool. Pass pool = train + test so that every train
    key is present in the pool.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if pool.n_samples < 1:
        raise ValueError("pool must be nonempty")
    if train.feature_names != pool.feature_names:
        raise ValueError("train and pool have different feature columns")

    disc_train = _discretized_matrix(train, cfg)
    disc_pool = _discretized_matrix(pool, cfg)
    stacked = np.vstack([disc_train, disc_pool])
    _, inverse = np.unique(stacked, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_train = train.n_samples
    train_ids, pool_ids = inverse[:n_train], inverse[n_train:]

    n_keys = int(inverse.max()) + 1
    m_t = np.bincount(train_ids, minlength=n_keys)
    n_t = np.bincount(pool_ids, minlength=n_keys)

    pool_size = pool.n_samples
    p_floor = 1.0 / pool_size
    missing = n_t[train_ids] == 0
    if missing.any():
        warnings.warn(
            f"{int(missing.sum())} training samples have keys absent from the "
            "pool; their selection probability falls back to 1",
            stacklevel=2,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = m_t[train_ids] / n_t[train_ids]
    p_hat = np.where(missing, 1.0, ratio)
    p_hat = np.clip(p_hat, p_floor, 1.0)

    m_prime = int(len(np.unique(train_ids)))
    pool_counts = n_t[np.unique(pool_ids)]
    p0 = max(float(pool_counts.min()) / pool_size, p_floor)
    epsilon = float(np.sqrt((np.log(2 * m_prime) + np.log(1.0 / delta)) / (p0 * pool_size)))
    return SelectionEstimate(
        p_hat=p_hat, epsilon=epsilon, m_prime=m_prime, p0=p0, pool_size=pool_size
    )


def _cluster_coords(data: EncodedDataset) -> np.ndarray:
    # Euclidean space for clustering: drop the bias column, append protected.
    return np.column_stack(
        [data.features[:, :-1], data.protected.astype(np.float64)]
    )


def _nearest(points: np.ndarray, centroids: np.ndarray):
    # squared distances via ||x||^2 - 2 x.c + ||c||^2, argmin over centroids
    cross = points @ centroids.T
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * cross
        + np.sum(centroids**2, axis=1)[None, :]
    )
    assign = np.argmin(d2, axis=1)
    return assign, np.maximum(d2[np.arange(len(points)), assign], 0.0)


def _plusplus_seeding(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
            continue
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans(data: EncodedDataset, k: int, seed: int, max_iter: int = 100) -> ClusterModel:
    """Lloyd iterations from k-means++ seeding; deterministic given seed.

    Empty clusters are re-seeded from the point farthest from its centroid.
    Stops when assignments are stable or after max_iter rounds.
    """
    n = data.n_samples
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples {n}")
    if k < 1 or max_iter < 1:
        raise ValueError("k and max_iter must be >= 1")
    points = _cluster_coords(data)
    rng = np.random.default_rng(seed)
    centroids = _plusplus_seeding(points, k, rng)
    assign, d2 = _nearest(points, centroids)
    for _ in range(max_iter):
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centroids[j] = points[far]
                d2[far] = 0.0
        new_assign, d2 = _nearest(points, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    # final pass guarantees no empty cluster survives in the returned model
    used, compact = np.unique(assign, return_inverse=True)
    return ClusterModel(
        centroids=centroids[used], assignment=compact, k=len(used), seed=seed
    )


def ratio_bounds_rflearn1(est: SelectionEstimate) -> RatioBounds:
    """Bounds on v = 1/p from the estimate interval |p - p_hat| <= eps.

    The upper probability is capped at 1 and the lower one floored at
    1/pool_size, so the interval is always valid and contains 1/p_hat.
    """
    eps = est.epsilon
    lo = 1.0 / np.minimum(1.0, est.p_hat + eps)
    hi = 1.0 / np.maximum(est.p_floor, est.p_hat - eps)
    return RatioBounds(lo=lo, hi=hi, nominal=1.0 / est.p_hat)


def ratio_bounds_rflearn2(clusters: ClusterModel, rho: float) -> RatioBounds:
    """Box of radius rho around the all-ones ratio, tied per cluster."""
    if not (0.0 <= rho < 1.0):
        raise ValueError("rho must lie in [0, 1); larger radii allow "
                         "nonpositive ratios")
    n = clusters.assignment.shape[0]
    return RatioBounds(
        lo=np.full(n, 1.0 - rho),
        hi=np.full(n, 1.0 + rho),
        nominal=np.ones(n),
        tied_groups=clusters.assignment.copy(),
    )
