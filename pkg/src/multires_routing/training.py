"""REINFORCE training over a multiresolution batch.

Each step samples fresh instances, clusters them once, and rolls out the
policy on three families of graphs: the originals, the K cluster-induced
sub-instances of each original, and the coarsened high-level instances. Every
graph's advantage (cost minus its own baseline cost) weights that graph's own
log-probability; sub terms carry 1/K, high terms 1/(number of high levels),
and the whole sum is averaged over the batch. ``literal_pairing`` instead
multiplies the combined advantage by the original's log-probability alone.

Baselines: ``greedy_rollout`` decodes every graph greedily with a frozen
parameter copy that is replaced whenever the live policy's validation mean
strictly improves; ``pomo_shared`` replaces it with the per-instance mean
cost over rollouts forced to distinct first nodes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import policy as PO
from .instances import CVRP, TSP, Instance, vehicle_capacity
from .multires import KMEANS_MAX_ITERS, MultiresHierarchy

GREEDY_ROLLOUT = "greedy_rollout"
POMO_SHARED = "pomo_shared"
DEMAND_SLACK = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; paper-scale values remain configurable."""

    kind: str = TSP
    n: int = 20
    batch_size: int = 64
    steps_per_epoch: int = 250
    epochs: int = 50
    clusters: int = 5
    levels: int = 2
    lr: float = 1e-4
    lr_decay: float = 1.0
    baseline: str = GREEDY_ROLLOUT
    pomo_starts: int = 8
    seed: int = 0
    sub_weight: float = 1.0
    high_weight: float = 1.0
    literal_pairing: bool = False
    invariant: bool = True
    validation_size: int = 64

    def __post_init__(self):
        if self.kind not in (TSP, CVRP):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clusters < 5:
            raise ValueError("clusters must be >= 5")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.baseline not in (GREEDY_ROLLOUT, POMO_SHARED):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.baseline == POMO_SHARED and self.pomo_starts < 1:
            raise ValueError("pomo_starts must be >= 1")
        if self.n < self.clusters:
            raise ValueError("need at least as many cities as clusters")
        if self.literal_pairing and self.baseline == POMO_SHARED:
            raise ValueError("literal pairing is defined for the greedy-rollout baseline")


@dataclass
class BaselineState:
    """Frozen-copy baseline (with its validation set and cached mean greedy
    cost) or the POMO shared-mean configuration."""

    mode: str
    frozen: PO.PolicyParams | None = None
    val_arrays: dict | None = None
    val_cost: float = float("inf")
    pomo_starts: int = 0


@dataclass
class EpochStats:
    epoch: int
    steps: int
    mean_orig_cost: float
    mean_sub_cost: float
    mean_high_cost: float
    mean_baseline_cost: float
    mean_delta_orig: float
    mean_sub_term: float
    mean_high_term: float
    mean_loss_estimate: float
    sub_skipped: int
    high_skipped: int
    val_cost: float | None
    baseline_replaced: bool
    wall_time: float


@dataclass
class TrainResult:
    params: PO.PolicyParams
    baseline: BaselineState
    adam: ad.AdamState
    history: list
    config: TrainConfig


def advantage(cost, baseline_cost):
    """REINFORCE advantage: positive when worse than the baseline."""
    return cost - baseline_cost


# ---------------------------------------------------------------------------
# batched instance sampling and clustering


def _sample_arrays(kind: str, n: int, b: int, rng: np.random.Generator) -> dict:
    """Stack of b fresh instances as raw arrays (CVRP depot at index 0)."""
    if kind == TSP:
        return {"coords": rng.uniform(0.0, 1.0, size=(b, n, 2)), "demands": None, "depots": None}
    coords = rng.uniform(0.0, 1.0, size=(b, n + 1, 2))
    raw = rng.integers(1, 10, size=(b, n)).astype(np.float64)
    demands = np.concatenate([np.zeros((b, 1)), raw / vehicle_capacity(n)], axis=1)
    return {"coords": coords, "demands": demands, "depots": np.zeros(b, dtype=np.int64)}


def _instances_to_arrays(instances) -> dict:
    kinds = {i.kind for i in instances}
    ns = {i.n for i in instances}
    if len(kinds) != 1 or len(ns) != 1:
        raise ValueError("batch must share one kind and one size")
    coords = np.stack([i.coords for i in instances])
    if kinds.pop() == TSP:
        return {"coords": coords, "demands": None, "depots": None}
    return {
        "coords": coords,
        "demands": np.stack([i.demands for i in instances]),
        "depots": np.array([i.depot for i in instances], dtype=np.int64),
    }


def _batched_kmeans(pts: np.ndarray, K: int, rng: np.random.Generator):
    """Lloyd with k-means++ seeding, vectorized across a (B, m, 2) stack.

    Same semantics as the single-instance version: lowest-id ties, empty
    clusters repaired with the farthest point of a cluster that can spare
    one, final centroids are exact member means.
    """
    b, m, _ = pts.shape
    rows = np.arange(b)
    centers = np.empty((b, K, 2))
    centers[:, 0] = pts[rows, rng.integers(0, m, size=b)]
    d2 = ((pts - centers[:, 0:1]) ** 2).sum(-1)
    for j in range(1, K):
        tot = d2.sum(1)
        idx = np.minimum((np.cumsum(d2, axis=1) < (rng.random(b) * tot)[:, None]).sum(1), m - 1)
        degenerate = tot <= 0.0
        if np.any(degenerate):
            idx[degenerate] = rng.integers(0, m, size=int(degenerate.sum()))
        centers[:, j] = pts[rows, idx]
        d2 = np.minimum(d2, ((pts - centers[:, j : j + 1]) ** 2).sum(-1))

    assign = None
    for _ in range(KMEANS_MAX_ITERS):
        d = ((pts[:, :, None, :] - centers[:, None, :, :]) ** 2).sum(-1)
        new = d.argmin(2)
        counts = np.bincount((new + rows[:, None] * K).ravel(), minlength=b * K).reshape(b, K)
        for i in np.flatnonzero((counts == 0).any(1)):
            sizes = counts[i]
            di = d[i]
            ai = new[i]
            for k in np.flatnonzero(sizes == 0):
                own = di[np.arange(m), ai]
                own = np.where(sizes[ai] >= 2, own, -np.inf)
                jmove = int(np.argmax(own))
                sizes[ai[jmove]] -= 1
                sizes[k] += 1
                ai[jmove] = k
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        flat = (assign + rows[:, None] * K).ravel()
        sums = np.stack(
            [
                np.bincount(flat, weights=pts[..., 0].ravel(), minlength=b * K),
                np.bincount(flat, weights=pts[..., 1].ravel(), minlength=b * K),
            ],
            axis=1,
        ).reshape(b, K, 2)
        counts = np.bincount(flat, minlength=b * K).reshape(b, K)
        centers = sums / counts[..., None]
    centroids = np.empty((b, K, 2))
    for k in range(K):
        sel = assign == k
        cnt = sel.sum(1)
        centroids[:, k, 0] = (pts[..., 0] * sel).sum(1) / cnt
        centroids[:, k, 1] = (pts[..., 1] * sel).sum(1) / cnt
    return assign, centroids


# ---------------------------------------------------------------------------
# rollout waves: same-shape graph stacks with per-row loss weights


@dataclass
class _Wave:
    level: str
    coords: np.ndarray
    demands: np.ndarray | None
    depots: np.ndarray | None
    inst_rows: np.ndarray
    scale: np.ndarray

    @property
    def n_for_starts(self) -> int:
        return self.coords.shape[1] - (0 if self.demands is None else 1)


def _cluster_waves(kind, arrays, assign, centroids, K, w_sub, w_high):
    """Sub-instance waves (bucketed by size) and the high-level wave.

    Returns (waves, sub_skipped, high_skipped). Skipped graphs (sub-clusters
    too small to route, capacity-infeasible coarse instances) contribute zero
    while the 1/K and 1/(high levels) divisors stay fixed.
    """
    b = arrays["coords"].shape[0]
    waves = []
    sub_skipped = 0
    high_skipped = 0
    cvrp = kind == CVRP
    coords = arrays["coords"]
    demands = arrays["demands"]
    min_cities = 2 if cvrp else 3

    if w_sub != 0.0:
        buckets: dict = {}
        for i in range(b):
            for k in range(K):
                members = np.flatnonzero(assign[i] == k)
                if members.size < min_cities:
                    sub_skipped += 1
                    continue
                buckets.setdefault(members.size, []).append((i, members))
        for size in sorted(buckets):
            entries = buckets[size]
            inst_rows = np.array([i for i, _ in entries], dtype=np.int64)
            idx = np.stack([mem for _, mem in entries])
            if cvrp:
                gidx = idx + 1
                sub_coords = np.concatenate(
                    [coords[inst_rows, :1], coords[inst_rows[:, None], gidx]], axis=1
                )
                sub_dem = np.concatenate(
                    [np.zeros((len(entries), 1)), demands[inst_rows[:, None], gidx]], axis=1
                )
                waves.append(
                    _Wave("sub", sub_coords, sub_dem, np.zeros(len(entries), dtype=np.int64),
                          inst_rows, np.full(len(entries), w_sub / K))
                )
            else:
                waves.append(
                    _Wave("sub", coords[inst_rows[:, None], idx], None, None,
                          inst_rows, np.full(len(entries), w_sub / K))
                )

    if w_high != 0.0:
        # one coarsening step: the next would leave K nodes again
        if cvrp:
            agg = np.zeros((b, K))
            rows = np.arange(b)
            np.add.at(agg, (rows[:, None].repeat(assign.shape[1], 1), assign), demands[:, 1:])
            ok = ~(agg > 1.0 + DEMAND_SLACK).any(1)
            high_skipped += int(b - ok.sum())
            if ok.any():
                hc = np.concatenate([coords[ok, :1], centroids[ok]], axis=1)
                hd = np.concatenate([np.zeros((int(ok.sum()), 1)), np.minimum(agg[ok], 1.0)], axis=1)
                waves.append(
                    _Wave("high", hc, hd, np.zeros(int(ok.sum()), dtype=np.int64),
                          np.flatnonzero(ok), np.full(int(ok.sum()), w_high))
                )
        else:
            waves.append(
                _Wave("high", centroids, None, None,
                      np.arange(b, dtype=np.int64), np.full(b, w_high))
            )
    return waves, sub_skipped, high_skipped


def _wave_inputs(waves) -> list:
    return [PO.WaveInput(w.coords, w.demands, w.depots) for w in waves]


@dataclass
class _StepOutcome:
    loss_node: ad.Tensor
    orig_costs: np.ndarray
    baseline_costs: np.ndarray
    delta_orig: np.ndarray
    sub_terms: np.ndarray
    high_terms: np.ndarray
    sub_costs: list
    high_costs: list
    sub_skipped: int
    high_skipped: int

    @property
    def loss_estimate(self) -> float:
        return float(np.mean(self.delta_orig) + np.mean(self.sub_terms) + np.mean(self.high_terms))


def _run_waves(params, baseline, cfg, waves_all, rng) -> _StepOutcome:
    """Roll out every wave on the active tape and assemble the surrogate whose
    gradient is the multiresolution REINFORCE estimator.

    All sampled rollouts share one encoder pass; greedy baseline rollouts run
    off-tape through a second shared pass of the frozen parameters.
    """
    b = waves_all[0].coords.shape[0]
    pomo = baseline.mode == POMO_SHARED
    inputs = _wave_inputs(waves_all)

    tiles = None
    base_batches = None
    if pomo:
        tiles, firsts = [], []
        for w in waves_all:
            starts = min(baseline.pomo_starts, w.n_for_starts)
            first = np.tile(np.arange(starts, dtype=np.int64), w.coords.shape[0])
            if w.demands is not None:
                first = first + 1
            tiles.append(starts)
            firsts.append(first)
        batches = PO.rollout_waves(params, inputs, "sample", rng, tiles=tiles, forced_firsts=firsts)
    elif cfg.literal_pairing:
        # combined-advantage form: only the original graph's log-prob is
        # differentiated, so the other rollouts stay off-tape
        batches = PO.rollout_waves(params, inputs[:1], "sample", rng)
        if len(inputs) > 1:
            with ad.no_grad():
                batches.extend(PO.rollout_waves(params, inputs[1:], "sample", rng))
    else:
        batches = PO.rollout_waves(params, inputs, "sample", rng)
    if not pomo:
        with ad.no_grad():
            base_batches = PO.rollout_waves(baseline.frozen, inputs, "greedy", want_logp=False)

    total = None
    orig_costs = np.zeros(b)
    baseline_costs = np.zeros(b)
    delta_orig = np.zeros(b)
    sub_terms = np.zeros(b)
    high_terms = np.zeros(b)
    sub_costs: list = []
    high_costs: list = []
    orig_logp = None
    combined = np.zeros(b)

    for i, (wave, rb) in enumerate(zip(waves_all, batches)):
        if pomo:
            starts = tiles[i]
            groups = rb.costs.reshape(-1, starts)
            deltas = (groups - groups.mean(axis=1, keepdims=True)).ravel()
            rows = np.repeat(wave.inst_rows, starts)
            scale_rows = np.repeat(wave.scale, starts) / starts
            base_for_stats = np.repeat(groups.mean(axis=1), starts)
        else:
            bc = base_batches[i].costs
            deltas = rb.costs - bc
            rows = wave.inst_rows
            scale_rows = wave.scale
            base_for_stats = bc

        scaled = deltas * scale_rows
        if cfg.literal_pairing and wave.level != "orig":
            np.add.at(combined, rows, scaled)
        else:
            term = ad.sum(ad.mul(rb.log_probs, scaled))
            total = term if total is None else ad.add(total, term)
        if wave.level == "orig":
            orig_logp = rb.log_probs
            np.add.at(orig_costs, rows, rb.costs * scale_rows)
            np.add.at(baseline_costs, rows, base_for_stats * scale_rows)
            np.add.at(delta_orig, rows, scaled)
        elif wave.level == "sub":
            np.add.at(sub_terms, rows, scaled)
            sub_costs.append(rb.costs)
        else:
            np.add.at(high_terms, rows, scaled)
            high_costs.append(rb.costs)

    if cfg.literal_pairing and np.any(combined):
        extra = ad.sum(ad.mul(orig_logp, combined[waves_all[0].inst_rows]))
        total = extra if total is None else ad.add(total, extra)
    return _StepOutcome(
        ad.scale(total, 1.0 / b), orig_costs, baseline_costs, delta_orig,
        sub_terms, high_terms, sub_costs, high_costs, 0, 0,
    )


def _step_waves(cfg: TrainConfig, arrays: dict, rng) -> tuple[list, int, int]:
    coords = arrays["coords"]
    b = coords.shape[0]
    orig = _Wave("orig", coords, arrays["demands"], arrays["depots"],
                 np.arange(b, dtype=np.int64), np.ones(b))
    if cfg.sub_weight == 0.0 and cfg.high_weight == 0.0:
        return [orig], 0, 0
    city_pts = coords if cfg.kind == TSP else coords[:, 1:]
    assign, centroids = _batched_kmeans(city_pts, cfg.clusters, rng)
    waves, sub_skipped, high_skipped = _cluster_waves(
        cfg.kind, arrays, assign, centroids, cfg.clusters, cfg.sub_weight, cfg.high_weight
    )
    return [orig, *waves], sub_skipped, high_skipped


def train_step(params, baseline, cfg, adam, lr, rng) -> _StepOutcome:
    """One gradient step on freshly sampled instances."""
    arrays = _sample_arrays(cfg.kind, cfg.n, cfg.batch_size, rng)
    waves, sub_skipped, high_skipped = _step_waves(cfg, arrays, rng)
    ad.zero_grads(params.tensors)
    with ad.Tape() as tape:
        out = _run_waves(params, baseline, cfg, waves, rng)
        tape.backward(out.loss_node)
    ad.adam_step(params.tensors, ad.collect_grads(params.tensors), adam, lr)
    out.sub_skipped = sub_skipped
    out.high_skipped = high_skipped
    return out


# ---------------------------------------------------------------------------
# public per-batch loss terms (hierarchy-driven reference path)


@dataclass
class LossTerms:
    """Per-instance advantages and the differentiable surrogate node."""

    delta_orig: float
    delta_sub: float
    delta_high: float
    surrogate: ad.Tensor
    sub_skipped: int = 0
    high_skipped: int = 0


def multires_loss_terms(
    params: PO.PolicyParams,
    instances,
    hierarchies,
    rng: np.random.Generator,
    *,
    baseline_params: PO.PolicyParams | None = None,
    mode: str = "sample",
    sub_weight: float = 1.0,
    high_weight: float = 1.0,
) -> list:
    """Advantage terms for a batch with prebuilt hierarchies.

    Rolls out every graph (original, K subs, each high level), computes a
    greedy baseline per graph with ``baseline_params`` (the policy itself when
    omitted, so greedy evaluation yields all-zero advantages), and returns one
    LossTerms per instance with the sub term weighted 1/K and the high term
    1/(number of high levels). Call under an active Tape to differentiate the
    surrogates.
    """
    if len(instances) != len(hierarchies):
        raise ValueError("one hierarchy per instance required")
    base = params if baseline_params is None else baseline_params
    out = []
    for inst, hier in zip(instances, hierarchies):
        if not isinstance(hier, MultiresHierarchy):
            raise TypeError("hierarchies must be MultiresHierarchy")
        k = len(hier.original_subs)
        graphs: list[tuple[str, Instance]] = [("orig", inst)]
        sub_skipped = 0
        for sub in hier.original_subs:
            if sub.instance is None:
                sub_skipped += 1
            else:
                graphs.append(("sub", sub.instance))
        highs = list(hier.high_levels)
        high_attempted = len(highs) + (1 if hier.degenerate_link is not None else 0)
        high_skipped = high_attempted - len(highs)
        for g in highs:
            graphs.append(("high", g))

        k_div = max(k, 1)
        h_div = max(high_attempted, 1)
        d_orig = d_sub = d_high = 0.0
        surrogate = None
        for level, g in graphs:
            with ad.no_grad():
                sol, _ = PO.rollout(params, g, mode, rng)
                bsol, _ = PO.rollout(base, g, "greedy")
            actions = PO._solution_actions(g, sol)
            lp = PO.teacher_forced_log_prob(params, g, actions)
            cost = _solution_cost(g, sol)
            bcost = _solution_cost(g, bsol)
            adv = advantage(cost, bcost)
            if level == "orig":
                w = 1.0
                d_orig += adv
            elif level == "sub":
                w = sub_weight / k_div
                d_sub += adv * (1.0 / k_div)
            else:
                w = high_weight / h_div
                d_high += adv * (1.0 / h_div)
            term = ad.scale(ad.sum(lp), adv * w)
            surrogate = term if surrogate is None else ad.add(surrogate, term)
        out.append(LossTerms(d_orig, d_sub, d_high, surrogate, sub_skipped, high_skipped))
    return out


def _solution_cost(instance: Instance, solution) -> float:
    from .instances import solution_cost

    return solution_cost(instance, solution)


# ---------------------------------------------------------------------------
# baselines


def pomo_rollouts(params: PO.PolicyParams, instance: Instance, starts: int, rng):
    """One sampled rollout per distinct forced first node.

    Returns (costs, advantages, log_probs tensor); advantages are shared-mean
    (they sum to exactly zero).
    """
    if instance.kind == CVRP:
        n_first = instance.n_cities
        candidates = np.setdiff1d(np.arange(instance.coords.shape[0]), [instance.depot])
    else:
        n_first = instance.n
        candidates = np.arange(instance.n)
    if not 1 <= starts <= n_first:
        raise ValueError(f"starts must be in 1..{n_first}, got {starts}")
    first = candidates[:starts].astype(np.int64)
    wave = PO.WaveInput(
        instance.coords[None],
        None if instance.kind != CVRP else instance.demands[None],
        None if instance.kind != CVRP else np.array([instance.depot], dtype=np.int64),
    )
    rb = PO.rollout_waves(params, [wave], "sample", rng, tiles=[starts], forced_firsts=[first])[0]
    adv = rb.costs - rb.costs.mean()
    return rb.costs, adv, rb.log_probs


def init_baseline(cfg: TrainConfig, params: PO.PolicyParams, rng: np.random.Generator) -> BaselineState:
    if cfg.baseline == POMO_SHARED:
        return BaselineState(mode=POMO_SHARED, pomo_starts=cfg.pomo_starts)
    val = _sample_arrays(cfg.kind, cfg.n, cfg.validation_size, rng)
    state = BaselineState(mode=GREEDY_ROLLOUT, frozen=params.copy(), val_arrays=val)
    state.val_cost = _validation_cost(params, val)
    return state


def _validation_cost(params: PO.PolicyParams, arrays: dict) -> float:
    with ad.no_grad():
        kw = {}
        if arrays["demands"] is not None:
            kw = {"demands": arrays["demands"], "depots": arrays["depots"]}
        rb = PO.rollout_batch(params, arrays["coords"], "greedy", want_logp=False, **kw)
        return float(rb.costs.mean())


def update_baseline(baseline: BaselineState, candidate: PO.PolicyParams, val_arrays: dict | None = None):
    """Replace the frozen copy when the candidate's validation mean is
    strictly lower. Returns (state, replaced, candidate_cost)."""
    if baseline.mode != GREEDY_ROLLOUT:
        return baseline, False, None
    arrays = baseline.val_arrays if val_arrays is None else val_arrays
    cost = _validation_cost(candidate, arrays)
    if cost < baseline.val_cost:
        baseline.frozen = candidate.copy()
        baseline.val_cost = cost
        return baseline, True, cost
    return baseline, False, cost


# ---------------------------------------------------------------------------
# epoch and run drivers


def train_epoch(
    params: PO.PolicyParams,
    baseline: BaselineState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    adam: ad.AdamState | None = None,
    epoch: int = 0,
    log_fn=None,
) -> EpochStats:
    """T gradient steps plus one baseline update; returns epoch statistics."""
    if adam is None:
        adam = ad.AdamState.for_params(params.tensors)
    lr = cfg.lr * (cfg.lr_decay**epoch)
    t0 = time.perf_counter()
    acc = {k: 0.0 for k in ("orig", "sub", "high", "base", "d_orig", "t_sub", "t_high", "loss")}
    sub_sk = high_sk = 0
    for step in range(cfg.steps_per_epoch):
        out = train_step(params, baseline, cfg, adam, lr, rng)
        sub_mean = float(np.mean(np.concatenate(out.sub_costs))) if out.sub_costs else 0.0
        high_mean = float(np.mean(np.concatenate(out.high_costs))) if out.high_costs else 0.0
        acc["orig"] += float(out.orig_costs.mean())
        acc["sub"] += sub_mean
        acc["high"] += high_mean
        acc["base"] += float(out.baseline_costs.mean())
        acc["d_orig"] += float(out.delta_orig.mean())
        acc["t_sub"] += float(out.sub_terms.mean())
        acc["t_high"] += float(out.high_terms.mean())
        acc["loss"] += out.loss_estimate
        sub_sk += out.sub_skipped
        high_sk += out.high_skipped
        if log_fn is not None:
            log_fn(
                f"{epoch} {step} {out.orig_costs.mean():.6f} {sub_mean:.6f} "
                f"{high_mean:.6f} {out.baseline_costs.mean():.6f} "
                f"{time.perf_counter() - t0:.3f}"
            )
    t = cfg.steps_per_epoch
    return EpochStats(
        epoch=epoch,
        steps=t,
        mean_orig_cost=acc["orig"] / t,
        mean_sub_cost=acc["sub"] / t,
        mean_high_cost=acc["high"] / t,
        mean_baseline_cost=acc["base"] / t,
        mean_delta_orig=acc["d_orig"] / t,
        mean_sub_term=acc["t_sub"] / t,
        mean_high_term=acc["t_high"] / t,
        mean_loss_estimate=acc["loss"] / t,
        sub_skipped=sub_sk,
        high_skipped=high_sk,
        val_cost=None,
        baseline_replaced=False,
        wall_time=time.perf_counter() - t0,
    )


def train(
    cfg: TrainConfig,
    log_fn=None,
    on_epoch=None,
    *,
    params: PO.PolicyParams | None = None,
    baseline: BaselineState | None = None,
    adam: ad.AdamState | None = None,
    start_epoch: int = 0,
) -> TrainResult:
    """Full run: init, epochs of train_epoch, baseline updates after each.

    Passing ``params``/``baseline``/``adam``/``start_epoch`` (from a saved
    checkpoint) resumes mid-run; every epoch draws its rng from the config
    seed alone, so a resumed run reproduces the unbroken one exactly.
    """
    if not 0 <= start_epoch <= cfg.epochs:
        raise ValueError(f"start_epoch must lie in 0..{cfg.epochs}, got {start_epoch}")
    ss = np.random.SeedSequence(cfg.seed)
    s_init, s_val, *s_epochs = ss.spawn(2 + cfg.epochs)
    if params is None:
        params = PO.init_params(cfg.kind, np.random.default_rng(s_init), invariant=cfg.invariant)
    if baseline is None:
        baseline = init_baseline(cfg, params, np.random.default_rng(s_val))
    if adam is None:
        adam = ad.AdamState.for_params(params.tensors)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng(s_epochs[epoch])
        stats = train_epoch(params, baseline, cfg, rng, adam, epoch, log_fn)
        if baseline.mode == GREEDY_ROLLOUT:
            baseline, replaced, cost = update_baseline(baseline, params)
            stats = replace(stats, val_cost=cost, baseline_replaced=replaced)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats, params, baseline, adam)
    return TrainResult(params, baseline, adam, history, cfg)
