"""Classical TSP/CVRP solvers: construction heuristics, 2-opt, and exact oracles.

The exact solvers return tours in one canonical form (start at node 0,
orientation with the smaller second node) so that independent oracles produce
bit-identical permutations and therefore bit-identical lengths.
"""

from __future__ import annotations

import itertools

import numpy as np

from .instances import (
    CVRP,
    TSP,
    CvrpSolution,
    Instance,
    Tour,
    pairwise_distances,
    tour_length,
)

HELD_KARP_MAX_N = 20
BRUTE_FORCE_MAX_N = 9


class TooLargeError(ValueError):
    """Instance exceeds an exact solver's size guard."""


def _canonical(order: np.ndarray) -> Tour:
    """Rotate a tour to start at node 0 and orient toward the smaller neighbor."""
    order = np.asarray(order, dtype=np.int64)
    start = int(np.argmin(order))
    order = np.roll(order, -start)
    if order.shape[0] > 2 and order[1] > order[-1]:
        order = np.concatenate([order[:1], order[1:][::-1]])
    return Tour(order)


def nearest_neighbor(instance: Instance, start: int = 0) -> Tour:
    """Greedy construction: from `start`, repeatedly visit the nearest
    unvisited node (ties broken toward the lowest index)."""
    if instance.kind != TSP:
        raise ValueError("nearest_neighbor applies to tsp instances")
    dist = pairwise_distances(instance.coords)
    n = instance.n
    order = np.empty(n, dtype=np.int64)
    order[0] = start
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    current = start
    for i in range(1, n):
        row = dist[current].copy()
        row[visited] = np.inf
        current = int(np.argmin(row))
        order[i] = current
        visited[current] = True
    return Tour(order)


def _two_opt_order(order: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """First-improvement 2-opt on a closed tour; restarts the scan after each
    applied move and stops when a full pass finds none."""
    order = order.copy()
    n = order.shape[0]
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = order[i], order[i + 1]
            d_ab = dist[a, b]
            # j+1 wraps to 0 only for j = n-1; skip the pair sharing node a
            j_hi = n if i > 0 else n - 1
            for j in range(i + 2, j_hi):
                c, d = order[j], order[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - d_ab - dist[c, d]
                if delta < -1e-12:
                    order[i + 1 : j + 1] = order[i + 1 : j + 1][::-1]
                    improved = True
                    break
            if improved:
                break
    return order


def two_opt(instance: Instance, tour: Tour) -> Tour:
    """Improve a tour by first-improvement edge exchanges until locally optimal."""
    if instance.kind != TSP:
        raise ValueError("two_opt applies to tsp instances")
    if tour.n != instance.n:
        raise ValueError("tour does not cover this instance")
    dist = pairwise_distances(instance.coords)
    return Tour(_two_opt_order(tour.order, dist))


def heuristic_tour(instance: Instance) -> Tour:
    """Nearest neighbor followed by 2-opt; the default non-exact reference."""
    return two_opt(instance, nearest_neighbor(instance))


# ---------------------------------------------------------------------------
# exact solvers

_MASK_LAYERS_CACHE: dict[int, list[np.ndarray]] = {}


def _masks_by_popcount(m: int) -> list[np.ndarray]:
    """All m-bit masks grouped by population count (cached; shared across calls)."""
    layers = _MASK_LAYERS_CACHE.get(m)
    if layers is None:
        masks = np.arange(1 << m, dtype=np.uint32)
        counts = np.bitwise_count(masks)
        order = np.argsort(counts, kind="stable")
        sorted_counts = counts[order]
        bounds = np.searchsorted(sorted_counts, np.arange(m + 2))
        layers = [order[bounds[s] : bounds[s + 1]].astype(np.int64) for s in range(m + 1)]
        _MASK_LAYERS_CACHE[m] = layers
    return layers


def held_karp(instance: Instance) -> tuple[Tour, float]:
    """Exact TSP optimum by subset dynamic programming over node sets.

    dp[S, j] is the cheapest path from node 0 through exactly the set S of
    non-zero nodes, ending at j in S. Layers are processed by subset size with
    the transition vectorized over all subsets of that size. Memory is
    O(2^(n-1) * n), which caps usable n at 20.
    """
    if instance.kind != TSP:
        raise ValueError("held_karp applies to tsp instances")
    n = instance.n
    if n > HELD_KARP_MAX_N:
        raise TooLargeError(f"held_karp supports n <= {HELD_KARP_MAX_N}, got {n}")
    dist = pairwise_distances(instance.coords)
    m = n - 1
    d0 = dist[0, 1:]
    dmm = dist[1:, 1:]
    size = 1 << m
    dp = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int8)
    singles = (1 << np.arange(m)).astype(np.int64)
    dp[singles, np.arange(m)] = d0
    layers = _masks_by_popcount(m)
    for s in range(2, m + 1):
        masks = layers[s]
        for j in range(m):
            with_j = masks[(masks >> j) & 1 == 1]
            if with_j.size == 0:
                continue
            prev = with_j ^ (1 << j)
            cand = dp[prev] + dmm[:, j]
            best = np.argmin(cand, axis=1)
            rows = np.arange(with_j.size)
            dp[with_j, j] = cand[rows, best]
            parent[with_j, j] = best
    full = size - 1
    totals = dp[full] + dist[1:, 0]
    j = int(np.argmin(totals))
    length = float(totals[j])
    path = []
    mask = full
    while j >= 0:
        path.append(j + 1)
        pj = int(parent[mask, j])
        mask ^= 1 << j
        j = pj
    path.append(0)
    tour = _canonical(np.array(path[::-1], dtype=np.int64))
    return tour, tour_length(instance, tour)


def brute_force(instance: Instance) -> tuple[Tour, float]:
    """Exact TSP optimum by exhaustive enumeration with node 0 fixed first.

    Only orientations with the second node smaller than the last are scanned,
    covering each closed tour exactly once, (n-1)!/2 candidates in total.
    """
    if instance.kind != TSP:
        raise ValueError("brute_force applies to tsp instances")
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise TooLargeError(f"brute_force supports n <= {BRUTE_FORCE_MAX_N}, got {n}")
    dist = pairwise_distances(instance.coords)
    best_perm = None
    best_len = np.inf
    for perm in itertools.permutations(range(1, n)):
        if perm[0] > perm[-1]:
            continue
        length = dist[0, perm[0]] + dist[perm[-1], 0]
        for a, b in itertools.pairwise(perm):
            length += dist[a, b]
        if length < best_len:
            best_len = length
            best_perm = perm
    order = np.array((0,) + best_perm, dtype=np.int64)
    tour = _canonical(order)
    return tour, tour_length(instance, tour)


# ---------------------------------------------------------------------------
# CVRP reference

def cvrp_reference(instance: Instance) -> CvrpSolution:
    """Sweep construction (polar angle around the depot, capacity cuts) with
    per-route 2-opt cleanup; always feasible because demands are <= 1."""
    if instance.kind != CVRP:
        raise ValueError("cvrp_reference applies to cvrp instances")
    depot = instance.depot
    cities = instance.city_indices()
    rel = instance.coords[cities] - instance.coords[depot]
    angle = np.arctan2(rel[:, 1], rel[:, 0])
    radius = np.hypot(rel[:, 0], rel[:, 1])
    sweep = cities[np.lexsort((cities, radius, angle))]
    routes = []
    current: list[int] = []
    load = 0.0
    for c in sweep:
        d = float(instance.demands[c])
        if current and load + d > 1.0 + 1e-12:
            routes.append(np.array(current, dtype=np.int64))
            current = [int(c)]
            load = d
        else:
            current.append(int(c))
            load += d
    if current:
        routes.append(np.array(current, dtype=np.int64))
    dist = pairwise_distances(instance.coords)
    improved = []
    for r in routes:
        loop = np.concatenate([[depot], r])
        loop = _two_opt_order(loop, dist)
        at = int(np.argmax(loop == depot))
        loop = np.roll(loop, -at)
        improved.append(loop[1:])
    return CvrpSolution(tuple(improved))
