"""Problem instances for Euclidean routing: types, generators, objectives, JSONL IO.

Coordinates are float64 (n, 2) arrays. CVRP instances carry one depot node and
per-node demands already normalized by vehicle capacity, so every route must
fit within a unit of capacity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

TSP = "tsp"
CVRP = "cvrp"

KINDS = (TSP, CVRP)


class ParseError(ValueError):
    """Malformed dataset line or TSPLIB file."""


class InfeasibleSolutionError(ValueError):
    """A proposed solution violates coverage or capacity constraints."""


@dataclass(frozen=True, eq=False)
class Instance:
    """One routing problem. For CVRP, ``coords`` includes the depot row."""

    kind: str
    coords: np.ndarray
    demands: np.ndarray | None = None
    depot: int | None = None
    name: str | None = None

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must be (n, 2), got {coords.shape}")
        if coords.shape[0] < 3:
            raise ValueError(f"need at least 3 nodes, got {coords.shape[0]}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        object.__setattr__(self, "coords", coords)
        if self.kind == TSP:
            if self.demands is not None or self.depot is not None:
                raise ValueError("tsp instances carry no demands or depot")
        elif self.kind == CVRP:
            if self.demands is None or self.depot is None:
                raise ValueError("cvrp instances need demands and a depot")
            demands = np.ascontiguousarray(self.demands, dtype=np.float64)
            if demands.shape != (coords.shape[0],):
                raise ValueError("demands must align with coords")
            depot = int(self.depot)
            if not 0 <= depot < coords.shape[0]:
                raise ValueError(f"depot index {depot} out of range")
            if demands[depot] != 0.0:
                raise ValueError("depot demand must be 0")
            city = np.delete(demands, depot)
            if np.any(city <= 0.0) or np.any(city > 1.0):
                raise ValueError("city demands must lie in (0, 1]")
            object.__setattr__(self, "demands", demands)
            object.__setattr__(self, "depot", depot)
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def n_cities(self) -> int:
        """Number of nodes that must be visited (excludes the CVRP depot)."""
        return self.n - 1 if self.kind == CVRP else self.n

    def city_indices(self) -> np.ndarray:
        if self.kind == CVRP:
            return np.delete(np.arange(self.n), self.depot)
        return np.arange(self.n)


@dataclass(frozen=True, eq=False)
class Tour:
    """Closed TSP tour given as a permutation of node indices."""

    order: np.ndarray

    def __post_init__(self):
        order = np.ascontiguousarray(self.order, dtype=np.int64)
        if order.ndim != 1:
            raise ValueError("tour order must be one-dimensional")
        n = order.shape[0]
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("tour order must be a permutation of 0..n-1")
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return self.order.shape[0]


@dataclass(frozen=True, eq=False)
class CvrpSolution:
    """Ordered routes of city indices; depot visits are implicit at route ends."""

    routes: tuple

    def __post_init__(self):
        routes = tuple(np.ascontiguousarray(r, dtype=np.int64) for r in self.routes)
        for r in routes:
            if r.ndim != 1 or r.shape[0] == 0:
                raise ValueError("each route must be a non-empty index vector")
        object.__setattr__(self, "routes", routes)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Full Euclidean distance matrix with an exactly zero diagonal."""
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    return d


def tour_length(instance: Instance, tour: Tour) -> float:
    """Closed-loop length: legs between consecutive nodes plus the return leg."""
    if instance.kind != TSP:
        raise ValueError("tour_length applies to tsp instances")
    order = tour.order
    if order.shape[0] != instance.n:
        raise ValueError("tour does not cover this instance")
    pts = instance.coords[order]
    legs = pts - np.roll(pts, -1, axis=0)
    return float(np.sum(np.sqrt(np.einsum("ij,ij->i", legs, legs))))


def validate_cvrp_solution(instance: Instance, solution: CvrpSolution) -> None:
    """Raise InfeasibleSolutionError unless routes cover every city once within capacity."""
    if instance.kind != CVRP:
        raise ValueError("expected a cvrp instance")
    visited = np.concatenate([r for r in solution.routes]) if solution.routes else np.empty(0, np.int64)
    cities = instance.city_indices()
    if not np.array_equal(np.sort(visited), np.sort(cities)):
        raise InfeasibleSolutionError("routes must visit every city exactly once")
    for r in solution.routes:
        load = float(np.sum(instance.demands[r]))
        if load > 1.0 + 1e-12:
            raise InfeasibleSolutionError(f"route demand {load} exceeds capacity")


def cvrp_feasible(instance: Instance, solution: CvrpSolution) -> bool:
    try:
        validate_cvrp_solution(instance, solution)
    except InfeasibleSolutionError:
        return False
    return True


def cvrp_solution_length(instance: Instance, solution: CvrpSolution, validate: bool = True) -> float:
    """Total length of all routes, each starting and ending at the depot."""
    if validate:
        validate_cvrp_solution(instance, solution)
    depot = instance.coords[instance.depot]
    total = 0.0
    for r in solution.routes:
        pts = np.concatenate([depot[None, :], instance.coords[r], depot[None, :]], axis=0)
        legs = pts[1:] - pts[:-1]
        total += float(np.sum(np.sqrt(np.einsum("ij,ij->i", legs, legs))))
    return total


def solution_cost(instance: Instance, solution) -> float:
    """Objective for either kind; dispatches on the solution type."""
    if isinstance(solution, Tour):
        return tour_length(instance, solution)
    return cvrp_solution_length(instance, solution)


# ---------------------------------------------------------------------------
# generators


def generate_uniform(n: int, rng: np.random.Generator, name: str | None = None) -> Instance:
    """TSP instance with n cities drawn uniformly from the unit square."""
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return Instance(TSP, coords, name=name)


def generate_clustered(
    n: int,
    n_clusters: int,
    rng: np.random.Generator,
    noise: float = 0.07,
    name: str | None = None,
) -> Instance:
    """TSP instance: cities scatter around uniformly placed cluster centers.

    Each city picks a center uniformly at random and adds isotropic Gaussian
    noise with the given scale, clipped back into the unit square.
    """
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= n_clusters <= n, got n_clusters={n_clusters}, n={n}")
    coords = _sample_clustered(n, n_clusters, rng, noise)
    return Instance(TSP, coords, name=name)


def _sample_clustered(n: int, n_clusters: int, rng: np.random.Generator, noise: float) -> np.ndarray:
    centers = rng.uniform(0.0, 1.0, size=(n_clusters, 2))
    pick = rng.integers(0, n_clusters, size=n)
    coords = centers[pick] + rng.normal(0.0, noise, size=(n, 2))
    np.clip(coords, 0.0, 1.0, out=coords)
    return coords


def generate_mixed(
    n: int,
    n_clusters: int,
    rng: np.random.Generator,
    noise: float = 0.07,
    name: str | None = None,
) -> Instance:
    """TSP instance: half the cities uniform, the rest around cluster centers."""
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= n_clusters <= n, got n_clusters={n_clusters}, n={n}")
    n_uniform = n // 2
    uniform_part = rng.uniform(0.0, 1.0, size=(n_uniform, 2))
    clustered_part = _sample_clustered(n - n_uniform, n_clusters, rng, noise)
    coords = np.concatenate([uniform_part, clustered_part], axis=0)
    return Instance(TSP, coords, name=name)


_CAPACITY_ANCHORS = ((20, 30.0), (50, 40.0), (100, 50.0))


def vehicle_capacity(n: int) -> int:
    """Integer capacity for n cities: 30/40/50 at n=20/50/100, linear between
    anchors, linearly extrapolated outside, never below 30."""
    xs = [a for a, _ in _CAPACITY_ANCHORS]
    ys = [c for _, c in _CAPACITY_ANCHORS]
    if n <= xs[1]:
        lo, hi = 0, 1
    else:
        lo, hi = 1, 2
    slope = (ys[hi] - ys[lo]) / (xs[hi] - xs[lo])
    value = ys[lo] + slope * (n - xs[lo])
    return max(30, int(math.floor(value + 0.5)))


def generate_cvrp(n: int, rng: np.random.Generator, name: str | None = None) -> Instance:
    """CVRP instance: depot at index 0, n cities, integer demands 1..9
    normalized by the size-dependent capacity."""
    coords = rng.uniform(0.0, 1.0, size=(n + 1, 2))
    raw = rng.integers(1, 10, size=n).astype(np.float64)
    demands = np.concatenate([[0.0], raw / vehicle_capacity(n)])
    return Instance(CVRP, coords, demands=demands, depot=0, name=name)


# ---------------------------------------------------------------------------
# JSONL serialization


def instance_to_record(instance: Instance) -> dict:
    rec = {"kind": instance.kind, "coords": instance.coords.tolist()}
    if instance.kind == CVRP:
        rec["demands"] = instance.demands.tolist()
        rec["depot"] = instance.depot
    if instance.name is not None:
        rec["name"] = instance.name
    return rec


def record_to_instance(rec: dict) -> Instance:
    try:
        kind = rec["kind"]
        coords = np.asarray(rec["coords"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad instance record: {exc}") from exc
    demands = rec.get("demands")
    if demands is not None:
        demands = np.asarray(demands, dtype=np.float64)
    try:
        return Instance(kind, coords, demands=demands, depot=rec.get("depot"), name=rec.get("name"))
    except ValueError as exc:
        raise ParseError(f"bad instance record: {exc}") from exc


def save_dataset(instances, path) -> None:
    """Write instances as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst)) + "\n")


def load_dataset(path) -> list:
    """Read a JSONL dataset; raises ParseError with the offending line number."""
    return _load_jsonl(path, record_to_instance)


def _load_jsonl(path, convert) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                out.append(convert(rec))
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def solution_to_record(solution, **extra) -> dict:
    """JSON record for a Tour or CvrpSolution; extra key/values pass through."""
    if isinstance(solution, Tour):
        rec = {"order": solution.order.tolist()}
    elif isinstance(solution, CvrpSolution):
        rec = {"routes": [r.tolist() for r in solution.routes]}
    else:
        raise ValueError(f"unsupported solution type {type(solution).__name__}")
    rec.update(extra)
    return rec


def record_to_solution(rec: dict):
    try:
        if "order" in rec:
            return Tour(np.asarray(rec["order"], dtype=np.int64))
        if "routes" in rec:
            return CvrpSolution(tuple(np.asarray(r, dtype=np.int64) for r in rec["routes"]))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad solution record: {exc}") from exc
    raise ParseError("bad solution record: needs 'order' or 'routes'")


def save_solutions(solutions, path, extras=None) -> None:
    """Write solutions as JSONL; ``extras`` is an optional parallel list of
    metadata dicts merged into each record (objective, method, ...)."""
    solutions = list(solutions)
    with open(path, "w", encoding="utf-8") as fh:
        for i, sol in enumerate(solutions):
            extra = extras[i] if extras is not None else {}
            fh.write(json.dumps(solution_to_record(sol, **extra)) + "\n")


def load_solutions(path) -> list:
    """Read a JSONL solutions file written by save_solutions."""
    return _load_jsonl(path, record_to_solution)
