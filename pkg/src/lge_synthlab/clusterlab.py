"""Intensity k-means with Silhouette / Davies-Bouldin model selection.

Clustering is one-dimensional (voxel intensity only). Smoothing is a
separate preprocessing step: call :func:`lge_synthlab.volcore.gaussian_smooth`
before :func:`kmeans` when the smoothed grid is wanted.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    CoincidentCentroids,
    DataError,
    DegenerateClusters,
    SingleCluster,
    TooFewDistinctValues,
)
from .volcore import LabelMap3D, Volume3D

__all__ = [
    "ClusterModel",
    "KSweepRow",
    "KSweepReport",
    "kmeans",
    "kmeans_values",
    "assign_nearest",
    "silhouette_score",
    "davies_bouldin",
    "sweep_k",
]

DEFAULT_MAX_ITERS = 300
DEFAULT_TOL = 1e-4
DEFAULT_SAMPLE_CAP = 10_000


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: LabelMap3D
    inertia: float
    n_iter: int
    converged: bool
    inertia_trace: tuple = field(default=())


def _values_of(v):
    if isinstance(v, Volume3D):
        return np.asarray(v.data, dtype=np.float64).ravel(order="F")
    return np.asarray(v, dtype=np.float64).ravel()


def assign_nearest(values, centroids):
    """Index of the nearest centroid; ties go to the lowest index."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.zeros(len(values), dtype=np.intp)
    best = (values - centroids[0]) ** 2
    for j in range(1, len(centroids)):
        d2 = (values - centroids[j]) ** 2
        closer = d2 < best
        labels[closer] = j
        best = np.where(closer, d2, best)
    return labels, best


def _plus_plus_init(x, k, rng):
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        # inverse-CDF draw; searchsorted picks the lowest index on ties
        cdf = np.cumsum(d2)
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, (x - x[idx]) ** 2)
    return np.array(centers, dtype=np.float64)


def _update(x, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=x, minlength=k)
    return sums, counts


def kmeans_values(values, k, seed=0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Lloyd's k-means on a flat array of intensities.

    Returns ``(centroids, labels, inertia, n_iter, converged, trace)`` with
    centroids sorted ascending and labels relabelled to match.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(np.unique(x)) < k:
        raise TooFewDistinctValues(f"need at least {k} distinct intensities")
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plus_plus_init(x, k, rng)
    if len(np.unique(centroids)) < k:
        raise DegenerateClusters("k-means++ seeding produced coincident centroids")

    trace = []
    converged = False
    reseeded = False
    n_iter = 0
    prev = None
    for n_iter in range(1, max_iters + 1):
        labels, d2 = assign_nearest(x, centroids)
        inertia = float(d2.sum())
        trace.append(inertia)
        sums, counts = _update(x, labels, k)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            if reseeded:
                raise DegenerateClusters(f"cluster(s) {empty.tolist()} empty after reseeding")
            reseeded = True
            far = d2.copy()
            for c in empty:
                idx = int(np.argmax(far))
                centroids[c] = x[idx]
                far[x == x[idx]] = -1.0
            continue
        centroids = sums / counts
        if inertia == 0.0 or (prev is not None and abs(prev - inertia) / inertia < tol):
            converged = True
            break
        prev = inertia

    # Final assignment against the returned centroids keeps the
    # nearest-centroid contract exact.
    order = np.argsort(centroids, kind="stable")
    centroids = centroids[order]
    if np.any(np.diff(centroids) <= 0):
        raise DegenerateClusters("centroids collapsed onto the same intensity")
    labels, d2 = assign_nearest(x, centroids)
    inertia = float(d2.sum())
    trace.append(inertia)
    if np.any(np.bincount(labels, minlength=k) == 0):
        raise DegenerateClusters("a cluster is empty after final assignment")
    return centroids, labels, inertia, n_iter, converged, tuple(trace)


def kmeans(v, k, seed=0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Cluster the voxel intensities of ``v`` into ``k`` groups.

    Seeding is k-means++ driven by ``seed``; the result is bit-identical for
    a fixed seed. Cluster 0 is always the darkest.

    Parameters
    ----------
    v : Volume3D
        Volume to cluster (smooth it first if desired).
    k : int
        Number of clusters.
    seed : int
        Seed for the k-means++ draw.
    max_iters : int
        Iteration cap; ``converged`` is False if it was hit.
    tol : float
        Relative inertia change below which iteration stops.
    """
    centroids, labels, inertia, n_iter, converged, trace = kmeans_values(
        _values_of(v), k, seed=seed, max_iters=max_iters, tol=tol)
    grid = labels.reshape(v.dims, order="F")
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=LabelMap3D(grid, v.spacing),
        inertia=inertia,
        n_iter=n_iter,
        converged=converged,
        inertia_trace=trace,
    )


# --- validity indices ---------------------------------------------------------

def _sum_abs_dist(points, sorted_ref, prefix):
    # sum_j |p - r_j| for each p, using sorted reference values and prefix sums
    idx = np.searchsorted(sorted_ref, points, side="right")
    below = points * idx - prefix[idx]
    above = (prefix[-1] - prefix[idx]) - points * (len(sorted_ref) - idx)
    return below + above


def _silhouette_1d(x, labels):
    ids = np.unique(labels)
    if len(ids) < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    n = len(x)
    a = np.zeros(n)
    b = np.full(n, np.inf)
    size = np.zeros(n, dtype=np.int64)
    for c in ids:
        members = labels == c
        ref = np.sort(x[members])
        # shift by the cluster minimum: identical values then sum to exactly 0
        origin = ref[0]
        ref = ref - origin
        prefix = np.concatenate(([0.0], np.cumsum(ref)))
        total = _sum_abs_dist(x - origin, ref, prefix)
        m = len(ref)
        size[members] = m
        if m > 1:
            a[members] = total[members] / (m - 1)
        outside = ~members
        b[outside] = np.minimum(b[outside], total[outside] / m)
    denom = np.maximum(a, b)
    s = np.zeros(n)
    ok = (size > 1) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return float(np.clip(s, -1.0, 1.0).mean())


def silhouette_score(values, assignments, sample_cap=DEFAULT_SAMPLE_CAP, seed=0):
    """Mean silhouette width of a 1-D clustering.

    When there are more than ``sample_cap`` points a seeded subsample without
    replacement is scored. Points in singleton clusters score 0, as do points
    with ``a = b = 0``. Distances are computed exactly with sorted prefix
    sums, so the cost is O(k n log n) rather than O(n^2).
    """
    x = _values_of(values)
    labels = np.asarray(assignments.labels if isinstance(assignments, LabelMap3D) else assignments)
    labels = labels.ravel(order="F") if isinstance(assignments, LabelMap3D) else labels.ravel()
    if len(labels) != len(x):
        raise DataError("values and assignments differ in length")
    if sample_cap is not None and len(x) > sample_cap:
        rng = np.random.Generator(np.random.PCG64(seed))
        pick = np.sort(rng.choice(len(x), size=sample_cap, replace=False))
        x, labels = x[pick], labels[pick]
    return _silhouette_1d(x, labels)


def davies_bouldin(values, assignments):
    """Davies-Bouldin index with mean-absolute-deviation scatter."""
    x = _values_of(values)
    if isinstance(assignments, LabelMap3D):
        labels = assignments.labels.ravel(order="F")
    else:
        labels = np.asarray(assignments).ravel()
    ids = np.unique(labels)
    if len(ids) < 2:
        raise SingleCluster("Davies-Bouldin needs at least two non-empty clusters")
    cents = np.array([x[labels == c].mean() for c in ids])
    scatter = np.array([np.abs(x[labels == c] - m).mean() for c, m in zip(ids, cents)])
    sep = np.abs(cents[:, None] - cents[None, :])
    np.fill_diagonal(sep, np.inf)
    if np.any(sep == 0):
        raise CoincidentCentroids("two clusters share a centroid")
    ratio = (scatter[:, None] + scatter[None, :]) / sep
    return float(ratio.max(axis=1).mean())


# --- k sweep ---------------------------------------------------------------------

@dataclass
class KSweepRow:
    k: int
    silhouette: float | None
    dbi: float | None
    inertia: float | None
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class KSweepReport:
    rows: list
    seed: int
    sample_cap: int

    def best_k_by_silhouette(self):
        ok = [r for r in self.rows if not r.failed]
        return max(ok, key=lambda r: r.silhouette).k

    def to_json(self):
        return json.dumps({
            "seed": self.seed,
            "sample_cap": self.sample_cap,
            "rows": [asdict(r) for r in self.rows],
        }, indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "silhouette", "dbi", "inertia"])
        for r in self.rows:
            writer.writerow([r.k, repr(r.silhouette) if r.silhouette is not None else "",
                             repr(r.dbi) if r.dbi is not None else "",
                             repr(r.inertia) if r.inertia is not None else ""])
        return buf.getvalue()


def sweep_k(v, k_min=2, k_max=10, seed=0, sample_cap=DEFAULT_SAMPLE_CAP,
            max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Cluster ``v`` for every k in ``[k_min, k_max]`` and score each fit.

    A k whose clustering fails gets a row with ``error`` set instead of
    aborting the sweep.
    """
    if k_min < 2 or k_max < k_min:
        raise ValueError("need 2 <= k_min <= k_max")
    x = _values_of(v)
    rows = []
    for k in range(k_min, k_max + 1):
        try:
            _, labels, inertia, *_ = kmeans_values(x, k, seed=seed, max_iters=max_iters, tol=tol)
            sil = silhouette_score(x, labels, sample_cap=sample_cap, seed=seed)
            dbi = davies_bouldin(x, labels)
        except DataError as exc:
            rows.append(KSweepRow(k, None, None, None, error=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(KSweepRow(k, sil, dbi, inertia))
    return KSweepReport(rows=rows, seed=seed, sample_cap=sample_cap)
