"""Clustering, sub-instance extraction, coarsening, and level hierarchies.

A hierarchy chains L instances: the original at the bottom, each level above
obtained by K-means clustering the cities of the level below and replacing
every cluster by its centroid. Cluster partitions double as the map from a
level to its sub-instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instances import CVRP, TSP, Instance

KMEANS_MAX_ITERS = 100
MIN_TOP_LEVEL_NODES = 5


class DegenerateHierarchyError(ValueError):
    """Coarsening produced an invalid problem (aggregated demand above capacity)."""


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    """Assignment of points to K non-empty clusters plus exact member-mean centroids."""

    assignment: np.ndarray
    centroids: np.ndarray
    K: int

    def __post_init__(self):
        assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)
        centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        K = int(self.K)
        if assignment.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if centroids.shape != (K, 2):
            raise ValueError(f"centroids must be ({K}, 2)")
        sizes = np.bincount(assignment, minlength=K)
        if assignment.size and (assignment.min() < 0 or assignment.max() >= K):
            raise ValueError("cluster ids must lie in [0, K)")
        if np.any(sizes == 0):
            raise ValueError("clusters must be non-empty")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "K", K)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


@dataclass(frozen=True, eq=False)
class SubInstance:
    """One cluster viewed as its own problem, with the map back to parent indices.

    ``instance`` is None when the cluster is too small to form a valid problem
    (fewer than 3 nodes including any prepended depot); such clusters still
    count toward partition laws but cannot be solved.
    """

    cluster_id: int
    coords: np.ndarray
    global_index: np.ndarray
    instance: Instance | None
    demands: np.ndarray | None = None
    depot: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]


def _kmeans_pp_centers(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.einsum("ij,ij->i", points - points[chosen[0]], points - points[chosen[0]])
    for _ in range(1, K):
        total = float(d2.sum())
        if total > 0.0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass on already-chosen points (duplicates)
            unchosen = np.setdiff1d(np.arange(n), np.array(chosen))
            j = int(rng.choice(unchosen))
        chosen.append(j)
        diff = points - points[j]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return points[np.array(chosen)].astype(np.float64, copy=True)


def kmeans(
    points: np.ndarray,
    K: int,
    rng: np.random.Generator,
    wcss_trace: list | None = None,
) -> ClusterPartition:
    """Lloyd's algorithm with k-means++ seeding.

    Ties in the assignment step go to the lowest cluster id. An empty cluster
    is repaired by moving in the point currently farthest from its own
    centroid, drawn from a cluster that can spare one. Stops when assignments
    are unchanged or after KMEANS_MAX_ITERS iterations; returned centroids are
    the exact member means of the final assignment.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must be (n, 2), got {points.shape}")
    n = points.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    centers = _kmeans_pp_centers(points, K, rng)
    assignment = None
    for _ in range(KMEANS_MAX_ITERS):
        diff = points[:, None, :] - centers[None, :, :]
        d2 = np.einsum("nkj,nkj->nk", diff, diff)
        new_assignment = np.argmin(d2, axis=1)
        sizes = np.bincount(new_assignment, minlength=K)
        for k in np.flatnonzero(sizes == 0):
            own = d2[np.arange(n), new_assignment]
            movable = sizes[new_assignment] >= 2
            own = np.where(movable, own, -np.inf)
            j = int(np.argmax(own))
            sizes[new_assignment[j]] -= 1
            sizes[k] += 1
            new_assignment[j] = k
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        sums = np.zeros((K, 2))
        np.add.at(sums, assignment, points)
        centers = sums / sizes[:, None]
        if wcss_trace is not None:
            resid = points - centers[assignment]
            wcss_trace.append(float(np.einsum("ij,ij->", resid, resid)))
    centroids = np.empty((K, 2))
    for k in range(K):
        centroids[k] = points[assignment == k].mean(axis=0)
    return ClusterPartition(assignment, centroids, K)


def _city_points(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    ids = instance.city_indices()
    return instance.coords[ids], ids


def build_subgraphs(instance: Instance, partition: ClusterPartition) -> list[SubInstance]:
    """Split an instance along a partition of its cities.

    CVRP sub-problems get the parent depot prepended (local index 0) so each
    remains a well-posed routing problem; the global index map covers every
    row of the sub coordinates.
    """
    _, city_ids = _city_points(instance)
    if partition.assignment.shape[0] != city_ids.shape[0]:
        raise ValueError("partition does not match the instance's cities")
    subs = []
    for k in range(partition.K):
        members = city_ids[partition.assignment == k]
        if instance.kind == CVRP:
            gidx = np.concatenate([[instance.depot], members])
            coords = instance.coords[gidx]
            demands = instance.demands[gidx]
            inst = None
            if coords.shape[0] >= 3:
                inst = Instance(CVRP, coords, demands=demands, depot=0)
            subs.append(SubInstance(k, coords, gidx, inst, demands=demands, depot=0))
        else:
            coords = instance.coords[members]
            inst = Instance(TSP, coords) if coords.shape[0] >= 3 else None
            subs.append(SubInstance(k, coords, members, inst))
    return subs


def coarsen(instance: Instance, partition: ClusterPartition) -> Instance:
    """Replace each cluster by its centroid; edge weights are implied by the
    centroid geometry. CVRP keeps the depot as its own node and sums member
    demands per cluster; a sum above one unit of capacity cannot be served by
    any route and raises DegenerateHierarchyError.
    """
    _, city_ids = _city_points(instance)
    if partition.assignment.shape[0] != city_ids.shape[0]:
        raise ValueError("partition does not match the instance's cities")
    if instance.kind == TSP:
        return Instance(TSP, partition.centroids.copy())
    agg = np.zeros(partition.K)
    np.add.at(agg, partition.assignment, instance.demands[city_ids])
    if np.any(agg > 1.0 + 1e-12):
        k = int(np.argmax(agg))
        raise DegenerateHierarchyError(
            f"cluster {k} aggregates demand {agg[k]:.6f} > capacity 1"
        )
    np.minimum(agg, 1.0, out=agg)  # shave float dust from sums that hit capacity
    coords = np.concatenate([instance.coords[instance.depot][None, :], partition.centroids], axis=0)
    demands = np.concatenate([[0.0], agg])
    return Instance(CVRP, coords, demands=demands, depot=0)


@dataclass(frozen=True, eq=False)
class MultiresHierarchy:
    """Chain of instances from coarsest (levels[0]) to the original (levels[-1]).

    links[i] is the partition of levels[i+1] whose centroids form levels[i];
    subs[i] are the sub-instances induced by links[i]. When a CVRP coarsening
    aborts on aggregated demand, the clustering that triggered it is kept in
    ``degenerate_link``/``degenerate_subs`` (its sub-problems are still valid;
    only the coarse level is not).
    """

    levels: tuple
    links: tuple
    subs: tuple
    degenerate_link: ClusterPartition | None = None
    degenerate_subs: tuple | None = None

    @property
    def original(self) -> Instance:
        return self.levels[-1]

    @property
    def high_levels(self) -> tuple:
        """Coarse instances above the original, coarsest first."""
        return self.levels[:-1]

    @property
    def original_subs(self) -> tuple:
        """Sub-instances of the original instance's clustering (possibly from a
        degenerate link whose coarse level was dropped)."""
        if self.subs:
            return tuple(self.subs[-1])
        if self.degenerate_subs is not None:
            return tuple(self.degenerate_subs)
        return ()

    @property
    def effective_L(self) -> int:
        return len(self.levels)


def build_hierarchy(instance: Instance, K: int, L: int, rng: np.random.Generator) -> MultiresHierarchy:
    """Repeatedly cluster and coarsen until L levels exist or a floor is hit.

    Coarsening stops early (shrinking the effective L) when another round
    could not strictly reduce the node count while keeping at least
    MIN_TOP_LEVEL_NODES, or when a CVRP coarse graph would be degenerate.
    """
    if L < 2:
        raise ValueError(f"need L >= 2, got {L}")
    if K < MIN_TOP_LEVEL_NODES:
        raise ValueError(f"need K >= {MIN_TOP_LEVEL_NODES}, got {K}")
    if instance.n_cities < K:
        raise ValueError(f"instance has {instance.n_cities} cities, fewer than K={K}")
    graphs = [instance]
    links_rev: list[ClusterPartition] = []
    subs_rev: list[list[SubInstance]] = []
    degenerate_link = None
    degenerate_subs = None
    while len(graphs) < L:
        g = graphs[-1]
        if K >= g.n_cities:
            break
        pts, _ = _city_points(g)
        partition = kmeans(pts, K, rng)
        sub = build_subgraphs(g, partition)
        try:
            coarse = coarsen(g, partition)
        except DegenerateHierarchyError:
            degenerate_link = partition
            degenerate_subs = tuple(sub)
            break
        links_rev.append(partition)
        subs_rev.append(sub)
        graphs.append(coarse)
    return MultiresHierarchy(
        levels=tuple(reversed(graphs)),
        links=tuple(reversed(links_rev)),
        subs=tuple(tuple(s) for s in reversed(subs_rev)),
        degenerate_link=degenerate_link,
        degenerate_subs=degenerate_subs,
    )
