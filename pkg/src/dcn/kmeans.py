"""K-means: batch Lloyd iterations plus online count-weighted updates.

The batch solver initializes and benchmarks; the online pieces
(:func:`assign_one`, :func:`centroid_sgd_update`) are the per-sample
updates used inside the alternating training loop.  With counts
incremented before the step, the online centroid update keeps each
centroid at the exact running mean of the samples assigned to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix


@dataclass
class ClusterState:
    """Centroids, per-sample assignments, and per-cluster sample counts.

    Assignments store the one-hot cluster indicator compactly as an
    integer index in ``[0, k)``.  Counts stay >= 1 after initialization
    so the online update's 1/count step size is always defined.
    """

    centroids: np.ndarray  # (k, r) float64
    assignments: np.ndarray  # (n,) int64
    counts: np.ndarray  # (k,) int64

    def __post_init__(self):
        self.centroids = as_matrix(self.centroids, "centroids")
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.centroids.shape[0]
        if self.assignments.size and not (
            0 <= self.assignments.min() and self.assignments.max() < k
        ):
            raise ValueError(f"assignments out of range [0, {k})")
        if self.counts.shape != (k,):
            raise ValueError(f"counts must have shape ({k},), got {self.counts.shape}")

    def copy(self) -> "ClusterState":
        return ClusterState(
            self.centroids.copy(), self.assignments.copy(), self.counts.copy()
        )


def sq_distances(h: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """All pairwise squared Euclidean distances, shape (n, k)."""
    # ||h - m||^2 expanded; clip tiny negative rounding residue.
    d = (
        np.einsum("ij,ij->i", h, h)[:, None]
        - 2.0 * h @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d, 0.0)


def assign_all(h: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index for every row; ties go to the lowest index."""
    if centroids.shape[0] == 0:
        raise ValueError("empty centroid set")
    return np.argmin(sq_distances(h, centroids), axis=1).astype(np.int64)


def assign_one(h_i, m) -> int:
    """Nearest-centroid index for a single point.

    Ties break toward the lowest cluster index.
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    m = as_matrix(m, "centroids")
    if m.shape[0] == 0:
        raise ValueError("empty centroid set")
    if h_i.shape != (m.shape[1],):
        raise ValueError(
            f"point has shape {h_i.shape}, centroids have {m.shape[1]} columns"
        )
    diff = m - h_i
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def kmeans_cost(h: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared distances from each point to its assigned centroid."""
    diff = h - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeans_pp_init(h: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted seeding: each new centroid is drawn with
    probability proportional to the squared distance to the nearest
    centroid chosen so far."""
    n = h.shape[0]
    centroids = np.empty((k, h.shape[1]))
    centroids[0] = h[rng.integers(n)]
    closest = np.full(n, np.inf)
    for j in range(1, k):
        d = np.einsum("ij,ij->i", h - centroids[j - 1], h - centroids[j - 1])
        np.minimum(closest, d, out=closest)
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[j] = h[idx]
    return centroids


def lloyd(
    h,
    k: int,
    init: str = "kmeans_pp",
    max_iter: int = 100,
    tol: float = 1e-7,
    seed=None,
    initial_centroids=None,
    return_history: bool = False,
):
    """Batch Lloyd iterations on the rows of ``h``.

    Alternates nearest-centroid assignment with mean recomputation until
    the assignments reach a fixpoint, the relative cost change drops
    below ``tol``, or ``max_iter`` passes complete.  Clusters that lose
    all members are reseeded to the point currently farthest from its
    assigned centroid.

    Parameters
    ----------
    h : ndarray (n, r)
    k : int
        Number of clusters, ``1 <= k <= n``.
    init : {"kmeans_pp", "random_rows"}
        Seeding strategy, ignored when ``initial_centroids`` is given.
    initial_centroids : ndarray (k, r), optional
        Explicit starting centroids.
    return_history : bool
        Also return the per-iteration cost sequence (measured after each
        assignment pass; non-increasing).

    Returns
    -------
    (ClusterState, float) or (ClusterState, float, list[float])
    """
    h = as_matrix(h, "h")
    n = h.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples n={n}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")

    rng = np.random.default_rng(seed)
    if initial_centroids is not None:
        centroids = as_matrix(initial_centroids, "initial_centroids").copy()
        if centroids.shape != (k, h.shape[1]):
            raise ValueError(
                f"initial_centroids shape {centroids.shape} != ({k}, {h.shape[1]})"
            )
    elif init == "kmeans_pp":
        centroids = _kmeans_pp_init(h, k, rng)
    elif init == "random_rows":
        centroids = h[rng.choice(n, size=k, replace=False)].copy()
    else:
        raise ValueError(f"unknown init {init!r}")

    # One distance matrix drives both the labels and the recorded cost so
    # the non-increasing cost sequence holds exactly, not just to rounding.
    rows = np.arange(n)
    d = sq_distances(h, centroids)
    labels = d.argmin(axis=1).astype(np.int64)
    cost = float(d[rows, labels].sum())
    history = [cost]
    for _ in range(max_iter):
        # Mean step over the current partition.
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = h[members].mean(axis=0)
        # Reseed empty clusters to the worst-fit points, one each.
        empty = [j for j in range(k) if not (labels == j).any()]
        if empty:
            dist_own = np.einsum(
                "ij,ij->i", h - new_centroids[labels], h - new_centroids[labels]
            )
            order = np.argsort(dist_own)[::-1]
            for slot, j in enumerate(empty):
                new_centroids[j] = h[order[slot]]
        centroids = new_centroids

        d = sq_distances(h, centroids)
        new_labels = d.argmin(axis=1).astype(np.int64)
        new_cost = float(d[rows, new_labels].sum())
        history.append(new_cost)
        converged = np.array_equal(new_labels, labels) or (
            cost > 0 and (cost - new_cost) / cost < tol
        )
        labels, cost = new_labels, new_cost
        if converged:
            break

    counts = np.bincount(labels, minlength=k).astype(np.int64)
    counts[counts == 0] = 1  # online updates divide by the count
    state = ClusterState(centroids=centroids, assignments=labels, counts=counts)
    if return_history:
        return state, cost, history
    return state, cost


def centroid_sgd_update(
    state: ClusterState, h_i, k: int, count_order: str = "increment_first"
) -> ClusterState:
    """Online gradient step moving centroid ``k`` toward one latent point.

    With ``increment_first`` (default) the per-cluster count rises before
    the step, so the step size ``1/count`` makes the centroid the exact
    running mean of every point streamed into the cluster.  The
    ``stale_count`` order applies the step with the pre-increment count.

    Only centroid ``k`` and its count change.
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    n_clusters = state.centroids.shape[0]
    if not 0 <= k < n_clusters:
        raise ValueError(f"cluster index {k} out of range [0, {n_clusters})")
    if count_order == "increment_first":
        state.counts[k] += 1
        step = 1.0 / state.counts[k]
        state.centroids[k] -= step * (state.centroids[k] - h_i)
    elif count_order == "stale_count":
        step = 1.0 / state.counts[k]
        state.centroids[k] -= step * (state.centroids[k] - h_i)
        state.counts[k] += 1
    else:
        raise ValueError(f"unknown count_order {count_order!r}")
    return state


def save_centroids_csv(path, centroids: np.ndarray) -> None:
    """One centroid per row, comma separated, 17 significant digits."""
    with open(path, "w", encoding="utf-8") as f:
        for row in np.atleast_2d(centroids):
            f.write(",".join(f"{x:.17g}" for x in row) + "\n")


def save_assignments_csv(path, assignments: np.ndarray) -> None:
    """One integer cluster index per line."""
    with open(path, "w", encoding="utf-8") as f:
        for a in np.asarray(assignments).ravel():
            f.write(f"{int(a)}\n")
