"""Policy evaluation: optimality gaps, the geometric-consistency suite, and
cross-distribution protocols, plus CSV/JSON report serialization.

Wall-clock fields measure this machine and are excluded from reproducibility
comparisons; every other report field is deterministic given (params, dataset,
seed). Sampling candidates draw from per-candidate child streams, so the first
c candidates of a larger budget reproduce a smaller budget exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import policy as PO
from .baselines import HELD_KARP_MAX_N, cvrp_reference, held_karp, heuristic_tour
from .instances import (
    CVRP,
    TSP,
    CvrpSolution,
    Instance,
    Tour,
    generate_clustered,
    generate_mixed,
    generate_uniform,
    solution_cost,
)

GAP_SLACK = 1e-9
RATIO_RTOL = 1e-9
TIMING_FIELDS = ("wall_time", "total_time")

AUTO = "auto"
HELDKARP = "heldkarp"
HEURISTIC = "heuristic"
REFERENCES = (AUTO, HELDKARP, HEURISTIC)

ROTATION = "rotation"
TRANSLATION = "translation"
SCALING = "scaling"

DISTRIBUTIONS = ("uniform", "clustered", "mixed")


# ---------------------------------------------------------------------------
# geometric transforms


@dataclass(frozen=True)
class TransformSpec:
    """One similarity transform of the plane.

    ``rotation`` turns counterclockwise by ``angle`` radians about ``center``;
    ``translation`` shifts by ``delta``; ``scaling`` multiplies coordinates
    (hence every pairwise distance) by ``factor``.
    """

    kind: str
    center: tuple = (0.0, 0.0)
    angle: float = 0.0
    delta: tuple = (0.0, 0.0)
    factor: float = 1.0

    def __post_init__(self):
        if self.kind not in (ROTATION, TRANSLATION, SCALING):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == SCALING and not self.factor > 0.0:
            raise ValueError(f"scaling factor must be positive, got {self.factor}")

    @classmethod
    def rotation(cls, center, angle: float) -> "TransformSpec":
        return cls(ROTATION, center=(float(center[0]), float(center[1])), angle=float(angle))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "TransformSpec":
        return cls(TRANSLATION, delta=(float(dx), float(dy)))

    @classmethod
    def scaling(cls, factor: float) -> "TransformSpec":
        return cls(SCALING, factor=float(factor))

    @property
    def length_factor(self) -> float:
        """Exact multiplier every route length picks up under this transform."""
        return self.factor if self.kind == SCALING else 1.0


def apply_transform(instance: Instance, spec: TransformSpec) -> Instance:
    """Map the coordinates; demands, depot index, and name stay untouched."""
    pts = instance.coords
    if spec.kind == ROTATION:
        c = np.asarray(spec.center, dtype=np.float64)
        rel = pts - c
        cos, sin = math.cos(spec.angle), math.sin(spec.angle)
        rot = np.stack([cos * rel[:, 0] - sin * rel[:, 1], sin * rel[:, 0] + cos * rel[:, 1]], axis=1)
        coords = rot + c
    elif spec.kind == TRANSLATION:
        coords = pts + np.asarray(spec.delta, dtype=np.float64)
    else:
        coords = pts * spec.factor
    return Instance(instance.kind, coords, demands=instance.demands, depot=instance.depot, name=instance.name)


# ---------------------------------------------------------------------------
# decoding helpers


class _RowStreams:
    """Drop-in for the rollout rng that advances one generator per batch row.

    Row j's draws depend only on stream j, so a tiled candidate batch is
    reproducible row by row: candidate j decoded alone (from stream j) takes
    exactly the same actions.
    """

    def __init__(self, generators):
        self._gens = list(generators)

    def random(self, size: int) -> np.ndarray:
        if size != len(self._gens):
            raise ValueError(f"expected {len(self._gens)} rows, got {size}")
        return np.array([g.random() for g in self._gens])


def greedy_rollout(params: PO.PolicyParams, instance: Instance):
    """One greedy decode; returns (solution, cost)."""
    with ad.no_grad():
        rb = PO.rollout_batch(
            params, instance.coords[None], "greedy", want_logp=False, **PO._cvrp_kwargs(instance)
        )
    return rb.solutions[0], float(rb.costs[0])


def sample_rollouts(params: PO.PolicyParams, instance: Instance, count: int, seed_seq):
    """``count`` independent sampled decodes sharing one encoder pass.

    Candidate j draws from child stream j of ``seed_seq``, so the first c
    candidates of any larger count coincide (nested sampling budgets).
    Returns (costs, solutions).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    gens = [np.random.default_rng(child) for child in seed_seq.spawn(count)]
    wave = PO.WaveInput(
        instance.coords[None],
        instance.demands[None] if instance.kind == CVRP else None,
        np.array([instance.depot]) if instance.kind == CVRP else None,
    )
    with ad.no_grad():
        rb = PO.rollout_waves(
            params, [wave], "sample", _RowStreams(gens), want_logp=False, tiles=[count]
        )[0]
    return rb.costs, rb.solutions


# ---------------------------------------------------------------------------
# gap evaluation


@dataclass(frozen=True)
class EvalRow:
    index: int
    name: str | None
    objective: float
    reference: float
    gap: float
    mode: str
    exact: bool
    wall_time: float


@dataclass(frozen=True)
class EvalReport:
    """Per-instance objectives and gaps plus their aggregates.

    ``total_time`` sums the per-instance decode times; reference solvers are
    not counted. ``reference`` names the selector, ``exact`` per row says
    whether that row's reference is a proven optimum (gaps then cannot be
    negative beyond float noise).
    """

    rows: tuple
    mode: str
    reference: str
    mean_objective: float
    mean_reference: float
    mean_gap: float
    total_time: float

    def csv_rows(self) -> list:
        return [
            {
                "index": r.index,
                "name": "" if r.name is None else r.name,
                "objective": r.objective,
                "reference": r.reference,
                "gap": r.gap,
                "mode": r.mode,
                "exact": r.exact,
                "wall_time": r.wall_time,
            }
            for r in self.rows
        ]

    def aggregate(self) -> dict:
        return {
            "kind": "eval",
            "instances": len(self.rows),
            "mode": self.mode,
            "reference": self.reference,
            "mean_objective": self.mean_objective,
            "mean_reference": self.mean_reference,
            "mean_gap": self.mean_gap,
            "total_time": self.total_time,
        }


def _reference_cost(instance: Instance, selector: str) -> tuple[float, bool]:
    """Reference objective and whether it is a proven optimum."""
    if selector not in REFERENCES:
        raise ValueError(f"unknown reference {selector!r}")
    if instance.kind == CVRP:
        if selector == HELDKARP:
            raise ValueError("the exact reference applies to tsp instances only")
        sol = cvrp_reference(instance)
        return solution_cost(instance, sol), False
    if selector == HELDKARP or (selector == AUTO and instance.n <= HELD_KARP_MAX_N):
        _, length = held_karp(instance)
        return length, True
    tour = heuristic_tour(instance)
    return solution_cost(instance, tour), False


def _decode_best(params, instance, mode, samples, seed_seq):
    """Best objective among the decode candidates for one instance.

    Greedy always participates, so sample(c) dominates the greedy objective
    and is non-increasing in c for nested candidate streams.
    """
    sol, best = greedy_rollout(params, instance)
    if mode == "sample":
        costs, sols = sample_rollouts(params, instance, samples, seed_seq)
        j = int(np.argmin(costs))
        if costs[j] < best:
            best, sol = float(costs[j]), sols[j]
    return best, sol


def evaluate(
    params: PO.PolicyParams,
    dataset,
    mode: str = "greedy",
    *,
    samples: int = 1280,
    reference: str = AUTO,
    seed=0,
) -> EvalReport:
    """Decode every instance and report objectives and gaps.

    ``mode`` is "greedy" (one rollout) or "sample" (best of ``samples``
    sampled rollouts, greedy included as a candidate). ``seed`` (an int or a
    SeedSequence) drives the sampling candidates only.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(len(dataset))
    label = "greedy" if mode == "greedy" else f"sample({samples})"
    rows = []
    for i, inst in enumerate(dataset):
        t0 = time.perf_counter()
        obj, _ = _decode_best(params, inst, mode, samples, streams[i])
        dt = time.perf_counter() - t0
        ref, exact = _reference_cost(inst, reference)
        gap = obj / ref - 1.0
        if exact and gap < -GAP_SLACK:
            raise AssertionError(
                f"instance {i}: objective {obj} beats the proven optimum {ref}"
            )
        rows.append(EvalRow(i, inst.name, obj, ref, gap, label, exact, dt))
    return EvalReport(
        rows=tuple(rows),
        mode=label,
        reference=reference,
        mean_objective=float(np.mean([r.objective for r in rows])),
        mean_reference=float(np.mean([r.reference for r in rows])),
        mean_gap=float(np.mean([r.gap for r in rows])),
        total_time=float(np.sum([r.wall_time for r in rows])),
    )


# ---------------------------------------------------------------------------
# geometric-consistency suite


@dataclass(frozen=True)
class SymmetryRow:
    index: int
    transform: str
    factor: float
    base_objective: float
    transformed_objective: float
    sequence_match: bool
    ratio_match: bool

    @property
    def consistent(self) -> bool:
        return self.sequence_match and self.ratio_match


@dataclass(frozen=True)
class SymmetryReport:
    """Decision-level consistency under rotation, translation, and scaling.

    ``consistency`` is the fraction of instances whose greedy decision
    sequence and length ratio survive all three transforms.
    """

    rows: tuple
    instances: int
    consistency: float
    per_transform: dict

    def csv_rows(self) -> list:
        return [
            {
                "index": r.index,
                "transform": r.transform,
                "factor": r.factor,
                "base_objective": r.base_objective,
                "transformed_objective": r.transformed_objective,
                "sequence_match": r.sequence_match,
                "ratio_match": r.ratio_match,
                "consistent": r.consistent,
            }
            for r in self.rows
        ]

    def aggregate(self) -> dict:
        return {
            "kind": "symmetry",
            "instances": self.instances,
            "consistency": self.consistency,
            "per_transform": dict(self.per_transform),
        }


def _same_decision(a, b) -> bool:
    if isinstance(a, Tour) and isinstance(b, Tour):
        return np.array_equal(a.order, b.order)
    if isinstance(a, CvrpSolution) and isinstance(b, CvrpSolution):
        return len(a.routes) == len(b.routes) and all(
            np.array_equal(r, s) for r, s in zip(a.routes, b.routes)
        )
    return False


def suite_transforms(rng: np.random.Generator) -> list:
    """The three checks: quarter-turn about the square's center, a random
    translation from [0,1]^2, and a random scale from [0.7, 1.2]."""
    return [
        TransformSpec.rotation((0.5, 0.5), math.pi / 2),
        TransformSpec.translation(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)),
        TransformSpec.scaling(rng.uniform(0.7, 1.2)),
    ]


def symmetry_suite(params: PO.PolicyParams, dataset, rng: np.random.Generator) -> SymmetryReport:
    """Greedy-decode each instance and its transformed versions; record whether
    the node sequences match and the length ratio equals the scale factor."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    rows = []
    consistent = 0
    per_transform_hits = {ROTATION: 0, TRANSLATION: 0, SCALING: 0}
    for i, inst in enumerate(dataset):
        base_sol, base_cost = greedy_rollout(params, inst)
        all_ok = True
        for spec in suite_transforms(rng):
            t_sol, t_cost = greedy_rollout(params, apply_transform(inst, spec))
            seq_ok = _same_decision(base_sol, t_sol)
            factor = spec.length_factor
            ratio_ok = abs(t_cost / base_cost - factor) <= RATIO_RTOL * factor
            rows.append(SymmetryRow(i, spec.kind, factor, base_cost, t_cost, seq_ok, ratio_ok))
            ok = seq_ok and ratio_ok
            per_transform_hits[spec.kind] += ok
            all_ok = all_ok and ok
        consistent += all_ok
    n = len(dataset)
    return SymmetryReport(
        rows=tuple(rows),
        instances=n,
        consistency=consistent / n,
        per_transform={k: v / n for k, v in per_transform_hits.items()},
    )


# ---------------------------------------------------------------------------
# cross-distribution / cross-size protocol


@dataclass(frozen=True)
class CrossEvalRow:
    size: int
    distribution: str
    n_clusters: int
    instances: int
    mean_objective: float
    mean_reference: float
    mean_gap: float
    total_time: float


@dataclass(frozen=True)
class CrossEvalReport:
    rows: tuple
    mode: str
    reference: str

    def csv_rows(self) -> list:
        return [
            {
                "size": r.size,
                "distribution": r.distribution,
                "n_clusters": r.n_clusters,
                "instances": r.instances,
                "mean_objective": r.mean_objective,
                "mean_reference": r.mean_reference,
                "mean_gap": r.mean_gap,
                "total_time": r.total_time,
            }
            for r in self.rows
        ]

    def aggregate(self) -> dict:
        return {
            "kind": "cross_eval",
            "mode": self.mode,
            "reference": self.reference,
            "rows": len(self.rows),
            "mean_gap": float(np.mean([r.mean_gap for r in self.rows])) if self.rows else 0.0,
            "total_time": float(np.sum([r.total_time for r in self.rows])) if self.rows else 0.0,
        }


def _combo_dataset(distribution: str, n: int, n_clusters: int, count: int, rng) -> list:
    if distribution == "uniform":
        return [generate_uniform(n, rng) for _ in range(count)]
    if distribution == "clustered":
        return [generate_clustered(n, n_clusters, rng) for _ in range(count)]
    if distribution == "mixed":
        return [generate_mixed(n, n_clusters, rng) for _ in range(count)]
    raise ValueError(f"unknown distribution {distribution!r}")


def cross_distribution_eval(
    params: PO.PolicyParams,
    sizes,
    distributions,
    n_clusters,
    *,
    count: int = 50,
    mode: str = "greedy",
    samples: int = 1280,
    reference: str = AUTO,
    seed: int = 0,
) -> CrossEvalReport:
    """Evaluate one trained model across sizes x distributions x cluster counts.

    Emits one row per combination (uniform combinations repeat across
    ``n_clusters`` values on fresh instances, keeping the table rectangular).
    Each combination derives its generation and sampling streams from its own
    child of ``seed``, so any row can be reproduced by a direct evaluate()
    call on the regenerated dataset.
    """
    if params.kind != TSP:
        raise ValueError("the cross-distribution protocol is defined over tsp generators")
    sizes = list(sizes)
    distributions = list(distributions)
    n_clusters = list(n_clusters)
    combos = [(n, d, nc) for n in sizes for d in distributions for nc in n_clusters]
    streams = np.random.SeedSequence(seed).spawn(len(combos))
    rows = []
    label = "greedy" if mode == "greedy" else f"sample({samples})"
    for (n, dist, nc), stream in zip(combos, streams):
        gen_ss, eval_ss = stream.spawn(2)
        dataset = _combo_dataset(dist, n, nc, count, np.random.default_rng(gen_ss))
        rep = evaluate(params, dataset, mode, samples=samples, reference=reference, seed=eval_ss)
        rows.append(
            CrossEvalRow(
                size=n,
                distribution=dist,
                n_clusters=nc,
                instances=count,
                mean_objective=rep.mean_objective,
                mean_reference=rep.mean_reference,
                mean_gap=rep.mean_gap,
                total_time=rep.total_time,
            )
        )
    return CrossEvalReport(rows=tuple(rows), mode=label, reference=reference)


# ---------------------------------------------------------------------------
# report files: CSV rows + JSON aggregate block


def report_csv(report) -> str:
    rows = report.csv_rows()
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def save_report(report, csv_path, json_path=None) -> None:
    """Write per-row CSV plus a JSON aggregate block next to it."""
    csv_path = Path(csv_path)
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    csv_path.write_text(report_csv(report), encoding="utf-8")
    Path(json_path).write_text(
        json.dumps(report.aggregate(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _parse_cell(text: str):
    if text == "":
        return None
    if text == "True":
        return True
    if text == "False":
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def load_report_csv(path) -> list:
    """Rows of a report CSV with numeric/bool cells parsed back (floats
    round-trip exactly through repr)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]
