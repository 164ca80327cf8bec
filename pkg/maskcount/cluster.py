import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from river import base
from scipy.spatial.distance import cdist

from maskcount.errors import NumericError

logger = logging.getLogger(__name__)


@dataclass
class ClusterResult:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: List[float] = field(default_factory=list)


def kmeans_plusplus(points, k, rng):
    """
    k-means++ seeding: each next center is drawn with probability
    proportional to its squared distance from the closest chosen center.
    """
    n = len(points)
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = cdist(points, np.array(centers), "sqeuclidean").min(axis=1)
        total = d2.sum()
        if total <= 0:
            # every point coincides with a center already
            centers.append(points[rng.integers(n)])
        else:
            centers.append(points[rng.choice(n, p=d2 / total)])
    return np.array(centers, dtype=np.float64)


def _repair_empty(labels, centroids, dist, points):
    """
    Give every empty cluster the point farthest from its own centroid.

    The seized point becomes the new centroid, so its cost drops to zero and
    the total inertia never goes up.
    """
    k = len(centroids)
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        own = dist[np.arange(len(points)), labels]
        donors = counts[labels] > 1
        candidate = int(np.argmax(np.where(donors, own, -1.0)))
        counts[labels[candidate]] -= 1
        labels[candidate] = j
        counts[j] = 1
        centroids[j] = points[candidate]
        dist[:, j] = cdist(points, centroids[j : j + 1], "sqeuclidean")[:, 0]
    return labels, centroids, dist


def kmeans(points, k, rng, max_iter=100):
    """
    Lloyd's algorithm from k-means++ seeds.

    Nearest-centroid ties go to the lowest centroid index. Stops when the
    assignments no longer change or after max_iter iterations.

    Parameters
    ----------
    points
        (n, dim) array or list of vectors.
    k
        Number of clusters, 1 <= k <= n.
    rng
        numpy Generator used for seeding.

    Example
    -------

    >>> import numpy as np
    >>> points = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], dtype=float)
    >>> result = kmeans(points, 2, np.random.default_rng(0))
    >>> bool(result.assignments[0] == result.assignments[1] != result.assignments[2])
    True
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if n < k:
        raise ValueError(f"Cannot make {k} clusters from {n} points")

    centroids = kmeans_plusplus(points, k, rng)
    labels = None
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dist = cdist(points, centroids, "sqeuclidean")
        new = np.argmin(dist, axis=1)
        new, centroids, dist = _repair_empty(new, centroids, dist, points)
        inertia = float(dist[np.arange(n), new].sum())
        if history and inertia > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise NumericError(
                "k-means inertia increased", iteration=iterations, before=history[-1], after=inertia
            )
        history.append(inertia)

        converged = labels is not None and np.array_equal(new, labels)
        labels = new
        centroids = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        if converged:
            break

    inertia = float(cdist(points, centroids, "sqeuclidean")[np.arange(n), labels].sum())
    return ClusterResult(k, centroids, labels, inertia, iterations, history)


class ExemplarKMeans(base.Clusterer):
    """Batch K-Means with restarts, usable as a river clusterer

    `fit` clusters a whole set of points at once (best inertia over
    `n_init` k-means++ restarts). After fitting, `learn_one` nudges the
    closest center towards a new point with a running mean and
    `predict_one` returns the closest center, so the fitted model keeps
    working on a stream.

    Parameters
    ----------
    n_clusters
        Number of clusters.
    max_iter
        Lloyd iterations per restart.
    n_init
        Number of restarts.
    seed
        Random seed used for the k-means++ seeding.

    Attributes
    ----------
    centers : dict
        Central positions of each cluster, as {feature index: value} dicts.
    result : ClusterResult
        The best batch clustering.

    Examples
    --------

    >>> import numpy as np
    >>> model = ExemplarKMeans(n_clusters=2, seed=0)
    >>> result = model.fit(np.array([[0.0, 0.0], [0.0, 1.0], [9.0, 9.0]]))
    >>> model.predict_one({0: 9.5, 1: 9.0}) == int(result.assignments[2])
    True
    """

    def __init__(self, n_clusters=2, max_iter=100, n_init=1, seed: int = None):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.n_init = n_init
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self.result = None
        self.centers = {}
        self._counts = {}

    def fit(self, points, rng=None):
        rng = rng if rng is not None else self._rng
        best = None
        for _ in range(self.n_init):
            result = kmeans(points, self.n_clusters, rng, self.max_iter)
            if best is None or result.inertia < best.inertia:
                best = result
        self.result = best
        self.centers = {
            i: dict(enumerate(center.tolist())) for i, center in enumerate(best.centroids)
        }
        self._counts = {i: int(c) for i, c in enumerate(np.bincount(best.assignments, minlength=self.n_clusters))}
        return best

    def _as_vector(self, x):
        dim = len(self.centers[0]) if self.centers else len(x)
        return np.array([x.get(i, 0.0) for i in range(dim)], dtype=np.float64)

    def predict_one(self, x):
        if not self.centers:
            return 0
        vector = self._as_vector(x)
        dim = len(vector)
        centroids = np.array(
            [[self.centers[i][j] for j in range(dim)] for i in sorted(self.centers)]
        )
        return int(np.argmin(cdist(vector[None], centroids, "sqeuclidean")[0]))

    def learn_one(self, x):
        if not self.centers:
            # the first point seeds every center
            dim = max(x) + 1 if x else 0
            self.centers = {
                i: {j: float(x.get(j, 0.0)) for j in range(dim)}
                for i in range(self.n_clusters)
            }
            self._counts = {i: 0 for i in range(self.n_clusters)}
        closest = self.predict_one(x)
        self._counts[closest] += 1
        step = 1.0 / self._counts[closest]
        for i, xi in enumerate(self._as_vector(x)):
            self.centers[closest][i] += step * (xi - self.centers[closest][i])

    @classmethod
    def _unit_test_params(cls):
        yield {"n_clusters": 3, "seed": 42}
