"""Attention encoder-decoder policy over geometry-invariant features.

The encoder embeds per-node scalars and biases every attention head with a
learned function of the pairwise distances; the decoder points at the next
node from a context of graph, first and current embeddings. Because features
are built from canonicalized distances only, greedy decisions are invariant
to rotation, translation, and uniform scaling of the input by construction.

Probability convention: a closed TSP tour has no distinguished start, so the
first decoded node anchors the tour and carries no probability; log_prob sums
steps 2..n. CVRP first moves are genuine decisions and are included. Forced
first nodes (shared-baseline rollouts) are likewise excluded from log_prob.

Several same-size stacks ("waves") can share one encoder pass: their node
rows are concatenated into a single row matrix so the big projections run as
one GEMM each, with attention applied per stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .instances import CVRP, TSP, CvrpSolution, Instance, Tour, validate_cvrp_solution

N_LAYERS = 3
N_HEADS = 8
HEAD_DIM = 16
D_MODEL = N_HEADS * HEAD_DIM
FF_DIM = 512
DIST_HIDDEN = 16
LOGIT_CLIP = 10.0
CAPACITY_SLACK = 1e-12
_INV_SQRT_D = 1.0 / math.sqrt(D_MODEL)


class DegenerateInstanceError(ValueError):
    """All points identical: scale-free features are undefined."""


@dataclass(frozen=True, eq=False)
class InvariantFeatures:
    """Distance-only node features: scalars per node, normalized pairwise
    distances, and the scale that was divided out."""

    node_scalars: np.ndarray
    pair_dists: np.ndarray
    scale: float


@dataclass
class DecodeState:
    """Decoder progress for a single instance.

    ``visited`` is the exclusion mask for the next step (True = not
    selectable), built by the caller under the rollout rules. ``depot`` lets
    a fully-masked CVRP state resolve to a forced depot return.
    """

    visited: np.ndarray
    first: int | None
    current: int | None
    capacity: float = 1.0
    t: int = 0
    depot: int | None = None


@dataclass(eq=False)
class PolicyParams:
    """Named parameter tensors plus the feature configuration they expect."""

    kind: str
    invariant: bool
    tensors: dict

    @property
    def hyper(self) -> dict:
        return {
            "kind": self.kind,
            "invariant": self.invariant,
            "n_layers": N_LAYERS,
            "n_heads": N_HEADS,
            "head_dim": HEAD_DIM,
            "d_model": D_MODEL,
            "ff_dim": FF_DIM,
            "feature_dim": feature_dim(self.kind, self.invariant),
        }

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            kind=self.kind,
            invariant=self.invariant,
            tensors={k: ad.Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()},
        )


def feature_dim(kind: str, invariant: bool = True) -> int:
    base = 1 if invariant else 2
    return base + (2 if kind == CVRP else 0)


def init_params(kind: str, rng: np.random.Generator, invariant: bool = True) -> PolicyParams:
    """Fresh parameters, uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor."""
    if kind not in (TSP, CVRP):
        raise ValueError(f"unknown kind {kind!r}")
    s = feature_dim(kind, invariant)
    t: dict[str, ad.Tensor] = {}

    def u(name, rows, cols=None):
        shape = (rows,) if cols is None else (rows, cols)
        t[name] = ad.parameter(shape, rng)

    def bias(name, size, fan_in):
        t[name] = ad.parameter((size,), rng, scale=1.0 / math.sqrt(fan_in))

    def const(name, value):
        t[name] = ad.Tensor(value, requires_grad=True)

    u("embed.w", s, D_MODEL)
    # embed.b must stay on the order of the signal (s features in [0,1] times
    # embed.w columns): much larger and every node embeds to nearly the same
    # vector, so attention values carry no node identity and the pointer goes
    # blind; exactly zero and the first layer norm collapses a rank-1 input
    # signal to its sign alone
    bias("embed.b", D_MODEL, D_MODEL)
    for i in range(N_LAYERS):
        p = f"enc{i}."
        const(p + "ln1.g", np.ones(D_MODEL))
        const(p + "ln1.b", np.zeros(D_MODEL))
        for w in ("wq", "wk", "wv", "wo"):
            u(p + w, D_MODEL, D_MODEL)
        u(p + "dist.w1", 1, DIST_HIDDEN)
        bias(p + "dist.b1", DIST_HIDDEN, 1)
        # no output bias: a per-head constant over a softmax row is inert
        u(p + "dist.w2", DIST_HIDDEN, N_HEADS)
        const(p + "ln2.g", np.ones(D_MODEL))
        const(p + "ln2.b", np.zeros(D_MODEL))
        u(p + "ff.w1", D_MODEL, FF_DIM)
        # zero feed-forward biases: random ones inject the same vector into
        # every node's residual stream, swamping the node-distinguishing signal
        const(p + "ff.b1", np.zeros(FF_DIM))
        u(p + "ff.w2", FF_DIM, D_MODEL)
        const(p + "ff.b2", np.zeros(D_MODEL))
    const("lnf.g", np.ones(D_MODEL))
    const("lnf.b", np.zeros(D_MODEL))
    ctx_fan = 3 * D_MODEL + (1 if kind == CVRP else 0)
    ctx_scale = 1.0 / math.sqrt(ctx_fan)
    for w in ("wc_mean", "wc_first", "wc_cur"):
        t["dec." + w] = ad.parameter((D_MODEL, D_MODEL), rng, scale=ctx_scale)
    if kind == CVRP:
        t["dec.wc_cap"] = ad.parameter((1, D_MODEL), rng, scale=ctx_scale)
    for w in ("wgq", "wgk", "wgv", "wgo", "wlk"):
        u("dec." + w, D_MODEL, D_MODEL)
    u("dec.first", D_MODEL)
    u("dec.current", D_MODEL)
    return PolicyParams(kind=kind, invariant=invariant, tensors=t)


# ---------------------------------------------------------------------------
# features


def _batch_pair_dists(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, :, None, :] - coords[:, None, :, :]
    d = np.sqrt(np.einsum("bijk,bijk->bij", diff, diff))
    b, n = coords.shape[0], coords.shape[1]
    d.reshape(b, -1)[:, :: n + 1] = 0.0
    return d


def _batch_features(
    kind: str,
    invariant: bool,
    coords: np.ndarray,
    demands: np.ndarray | None,
    depots: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized feature construction over a (B, n, 2) stack.

    Returns (node_scalars (B,n,S), pair_dists (B,n,n), scales (B,)).
    """
    b, n = coords.shape[0], coords.shape[1]
    dists = _batch_pair_dists(coords)
    if invariant:
        scales = dists.reshape(b, -1).max(axis=1)
        if np.any(scales <= 0.0):
            raise DegenerateInstanceError("all points identical")
        nd = dists / scales[:, None, None]
        center = coords.mean(axis=1, keepdims=True)
        rel = coords - center
        cdist = np.sqrt(np.einsum("bij,bij->bi", rel, rel)) / scales[:, None]
        cols = [cdist]
    else:
        scales = np.ones(b)
        nd = dists
        cols = [coords[:, :, 0], coords[:, :, 1]]
    if kind == CVRP:
        flags = np.zeros((b, n))
        flags[np.arange(b), depots] = 1.0
        cols.extend([demands, flags])
    scalars = np.stack(cols, axis=2)
    return scalars, nd, scales


def canonicalize(instance: Instance) -> InvariantFeatures:
    """Scale-free view of an instance: distances divided by the max pairwise
    distance, per-node distance to the centroid (plus demand and depot flag
    for CVRP). Identical for any rotated/translated/scaled copy."""
    scalars, nd, scales = _batch_features(
        instance.kind,
        True,
        instance.coords[None],
        None if instance.demands is None else instance.demands[None],
        None if instance.depot is None else np.array([instance.depot]),
    )
    return InvariantFeatures(scalars[0], nd[0], float(scales[0]))


def raw_features(instance: Instance) -> InvariantFeatures:
    """Coordinate features without canonicalization (the non-invariant ablation)."""
    scalars, nd, scales = _batch_features(
        instance.kind,
        False,
        instance.coords[None],
        None if instance.demands is None else instance.demands[None],
        None if instance.depot is None else np.array([instance.depot]),
    )
    return InvariantFeatures(scalars[0], nd[0], float(scales[0]))


def features_for(params: PolicyParams, instance: Instance) -> InvariantFeatures:
    return canonicalize(instance) if params.invariant else raw_features(instance)


# ---------------------------------------------------------------------------
# encoder


@dataclass(frozen=True)
class _Block:
    """One same-size stack's span inside the concatenated row matrix."""

    start: int
    b: int
    n: int
    dstart: int

    @property
    def rows(self) -> int:
        return self.b * self.n


def _split_heads(x: ad.Tensor, b: int, n: int) -> ad.Tensor:
    return ad.swapaxes(ad.reshape(x, (b, n, N_HEADS, HEAD_DIM)), 1, 2)


def _encode_rows(t: dict, scalars: np.ndarray, dflat: np.ndarray, blocks: list) -> ad.Tensor:
    """Shared encoder over concatenated node rows; attention per block."""
    x = ad.Tensor(scalars)
    d = ad.Tensor(dflat)
    spans = [(blk.start, blk.b, blk.n, blk.dstart) for blk in blocks]
    h = ad.linear(x, t["embed.w"], t["embed.b"])
    for i in range(N_LAYERS):
        p = f"enc{i}."
        # tanh, not relu: a relu unit whose kink misses the observed distance
        # range is affine there, and an affine-in-d head bias has
        # softmax-inert components; tanh keeps every unit curved
        hid = ad.tanh(ad.linear(d, t[p + "dist.w1"], t[p + "dist.b1"]))
        phi = ad.linear(hid, t[p + "dist.w2"])
        y = ad.layer_norm(h, t[p + "ln1.g"], t[p + "ln1.b"])
        wqkv = ad.concat([t[p + "wq"], t[p + "wk"], t[p + "wv"]], axis=1)
        att = ad.block_attention(ad.linear(y, wqkv), phi, spans, N_HEADS, HEAD_DIM)
        h = ad.add(h, ad.linear(att, t[p + "wo"]))
        z = ad.layer_norm(h, t[p + "ln2.g"], t[p + "ln2.b"])
        f1 = ad.linear_relu(z, t[p + "ff.w1"], t[p + "ff.b1"])
        h = ad.add(h, ad.linear(f1, t[p + "ff.w2"], t[p + "ff.b2"]))
    return _node_standardize(h, t, blocks)


def _node_standardize(h: ad.Tensor, t: dict, blocks: list) -> ad.Tensor:
    """Per-graph, per-feature standardization across the node axis, then a
    trainable gain and bias.

    The residual stream accumulates a component shared by every node of a
    graph; it dwarfs the node-distinguishing signal (the attention values are
    then nearly identical, so attention weights transport almost nothing) and
    it is invisible to every softmax while still driving the pointer's tanh
    clip toward saturation. Removing the cross-node mean at the one boundary
    the decoder reads fixes both. Per-node layer norm cannot: it rescales
    each node vector alone and leaves the shared component in place.
    """
    parts = []
    for blk in blocks:
        v = ad.rows_view(h, blk.start, blk.b, blk.n)
        sw = ad.swapaxes(v, 1, 2)
        ones = ad.Tensor(np.ones(blk.n))
        zeros = ad.Tensor(np.zeros(blk.n))
        z = ad.swapaxes(ad.layer_norm(sw, ones, zeros), 1, 2)
        parts.append(ad.reshape(z, (blk.rows, D_MODEL)))
    z = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return ad.add(ad.mul(z, t["lnf.g"]), t["lnf.b"])


def encode(params: PolicyParams, feats: InvariantFeatures) -> tuple[ad.Tensor, ad.Tensor]:
    """Node embeddings (n, d) and their mean (d,) for one instance."""
    n = feats.node_scalars.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    s = feats.node_scalars.shape[-1]
    h = _encode_rows(
        params.tensors,
        feats.node_scalars.reshape(n, s),
        feats.pair_dists.reshape(n * n, 1),
        [_Block(0, 1, n, 0)],
    )
    hbar = ad.reshape(ad.mean(ad.reshape(h, (1, n, D_MODEL)), axis=1), (D_MODEL,))
    return h, hbar


# ---------------------------------------------------------------------------
# decoder


class _QueryMaps:
    """Per-call precomposition of the decoder's query projections.

    Every context piece feeds the same glimpse projection, so
    (mean + first + current) @ Wq splits into parts projected through
    precomposed matrices (Wc @ Wq) once and gathered per step.
    """

    def __init__(self, t: dict, kind: str):
        self.t = t
        self.kind = kind
        self.w_mean_q = ad.matmul(t["dec.wc_mean"], t["dec.wgq"])
        self.w_first_q = ad.matmul(t["dec.wc_first"], t["dec.wgq"])
        self.w_cur_q = ad.matmul(t["dec.wc_cur"], t["dec.wgq"])
        self.plc_q = ad.add(
            ad.matmul(ad.reshape(t["dec.first"], (1, D_MODEL)), self.w_first_q),
            ad.matmul(ad.reshape(t["dec.current"], (1, D_MODEL)), self.w_cur_q),
        )
        self.cap_q = ad.matmul(t["dec.wc_cap"], t["dec.wgq"]) if kind == CVRP else None


class _Pointer:
    """Per-rollout decoder state over precomputed keys, values, and
    per-node query contributions (hq/hf: embeddings already passed through
    the composed current/first query maps)."""

    def __init__(self, maps, hbar, keys_g, vals_g, keys_l, hq, hf):
        self.maps = maps
        self.keys_g = keys_g
        self.vals_g = vals_g
        self.mixmat = ad.mix_matrix(maps.t["dec.wgo"], keys_l)
        self.hq = hq
        self.hf = hf
        self.q_mean = ad.linear(hbar, maps.w_mean_q)
        self.q_base = ad.add(self.q_mean, maps.plc_q)
        self.first_set = False
        self.cur_q = None

    def set_current(self, actions: np.ndarray) -> None:
        self.cur_q = ad.take_per_row(self.hq, actions)
        if not self.first_set:
            self.q_base = ad.add(self.q_mean, ad.take_per_row(self.hf, actions))
            self.first_set = True

    def _query(self, capacity: np.ndarray | None) -> ad.Tensor:
        q = self.q_base if self.cur_q is None else ad.add(self.q_base, self.cur_q)
        if self.maps.kind == CVRP:
            q = ad.add(q, ad.matmul(ad.Tensor(capacity[:, None]), self.maps.cap_q))
        return q

    def probs(self, mask: np.ndarray, capacity: np.ndarray | None = None) -> ad.Tensor:
        return ad.pointer_probs(
            self._query(capacity), self.keys_g, self.vals_g, self.mixmat,
            mask, LOGIT_CLIP, _INV_SQRT_D, N_HEADS, HEAD_DIM,
        )


class _LeanPointer:
    """Plain-numpy twin of _Pointer for greedy decoding without log-probs.

    Greedy action choice only needs pre-clip logits (tanh clipping is
    strictly monotone), so this path builds no tape nodes at all.
    """

    def __init__(self, maps, hbar, keys_g, vals_g, keys_l, hq, hf):
        self.kind = maps.kind
        self.keys = np.ascontiguousarray(keys_g.data)
        self.vals = np.ascontiguousarray(vals_g.data)
        self.mixmat = np.matmul(maps.t["dec.wgo"].data, keys_l.data.swapaxes(1, 2))
        self.hq = hq.data
        self.hf = hf.data
        self.rows = np.arange(hq.data.shape[0])
        self.q_mean = hbar.data @ maps.w_mean_q.data
        self.q_base = self.q_mean + maps.plc_q.data
        self.cap_q = None if maps.cap_q is None else maps.cap_q.data
        self.first_set = False
        self.cur_q = None
        self._inv_att = 1.0 / math.sqrt(HEAD_DIM)

    def set_current(self, actions: np.ndarray) -> None:
        self.cur_q = self.hq[self.rows, actions]
        if not self.first_set:
            self.q_base = self.q_mean + self.hf[self.rows, actions]
            self.first_set = True

    def logits_data(self, mask: np.ndarray, capacity: np.ndarray | None = None) -> np.ndarray:
        q = self.q_base if self.cur_q is None else self.q_base + self.cur_q
        if self.kind == CVRP:
            q = q + capacity[:, None] * self.cap_q
        b = q.shape[0]
        q3 = q.reshape(b, N_HEADS, HEAD_DIM)
        s = np.einsum("bhd,bhnd->bhn", q3, self.keys)
        s *= self._inv_att
        s = np.where(mask[:, None, :], -np.inf, s)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        mix = np.einsum("bhn,bhnd->bhd", s, self.vals).reshape(b, -1)
        return np.matmul(mix[:, None, :], self.mixmat)[:, 0]


def _build_pointer(t: dict, h: ad.Tensor, hbar: ad.Tensor, b: int, n: int, kind: str) -> _Pointer:
    maps = _QueryMaps(t, kind)
    keys_g = _split_heads(ad.linear(h, t["dec.wgk"]), b, n)
    vals_g = _split_heads(ad.linear(h, t["dec.wgv"]), b, n)
    keys_l = ad.linear(h, t["dec.wlk"])
    hq = ad.linear(h, maps.w_cur_q)
    hf = ad.linear(h, maps.w_first_q)
    return _Pointer(maps, hbar, keys_g, vals_g, keys_l, hq, hf)


def _choose(probs_data: np.ndarray, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    if mode == "greedy":
        return np.argmax(probs_data, axis=1)
    if rng is None:
        raise ValueError("sampling requires an rng")
    u = rng.random(probs_data.shape[0])
    cum = np.cumsum(probs_data, axis=1)
    a = np.minimum((cum < u[:, None]).sum(axis=1), probs_data.shape[1] - 1)
    landed = probs_data[np.arange(a.shape[0]), a]
    bad = landed <= 0.0
    if np.any(bad):
        a[bad] = np.argmax(probs_data[bad], axis=1)
    return a


def _greedy_masked_argmax(u_data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # tanh clipping is strictly monotone, so argmax over raw logits matches
    # argmax over clipped probabilities, ties included
    return np.argmax(np.where(mask, -np.inf, u_data), axis=1)


@dataclass
class RolloutBatch:
    """Batched rollout output: decoded actions, differentiable log-probs,
    objective values, and per-row solutions."""

    actions: np.ndarray
    log_probs: ad.Tensor
    costs: np.ndarray
    solutions: list


def _zero_logp(b: int) -> ad.Tensor:
    return ad.Tensor(np.zeros(b))


def _tsp_costs(coords: np.ndarray, orders: np.ndarray) -> np.ndarray:
    rows = np.arange(coords.shape[0])[:, None]
    pts = coords[rows, orders]
    legs = pts - np.roll(pts, -1, axis=1)
    return np.sqrt(np.einsum("bij,bij->bi", legs, legs)).sum(axis=1)


def _rollout_tsp(
    ptr,
    coords: np.ndarray,
    mode: str,
    rng: np.random.Generator | None,
    forced_first: np.ndarray | None,
    forced_actions: np.ndarray | None,
) -> RolloutBatch:
    b, n = coords.shape[0], coords.shape[1]
    visited = np.zeros((b, n), dtype=bool)
    rows = np.arange(b)
    lps = []
    acts = np.empty((b, n), dtype=np.int64)
    lean = isinstance(ptr, _LeanPointer)
    for step in range(n):
        if forced_actions is not None:
            a = forced_actions[:, step]
            if step > 0:
                lps.append(ad.log_pick(ptr.probs(visited), a))
        elif step == 0 and forced_first is not None:
            a = forced_first
        elif lean:
            a = _greedy_masked_argmax(ptr.logits_data(visited), visited)
        else:
            probs = ptr.probs(visited)
            a = _choose(probs.data, mode, rng)
            if step > 0:
                lps.append(ad.log_pick(probs, a))
        acts[:, step] = a
        visited[rows, a] = True
        ptr.set_current(a)
    logp = ad.add_n(lps) if lps else _zero_logp(b)
    costs = _tsp_costs(coords, acts)
    solutions = [Tour(acts[i]) for i in range(b)]
    return RolloutBatch(acts, logp, costs, solutions)


def _cvrp_route_costs(coords: np.ndarray, depots: np.ndarray, action_rows: list) -> np.ndarray:
    b = coords.shape[0]
    out = np.empty(b)
    for i in range(b):
        seq = np.concatenate([[depots[i]], action_rows[i], [depots[i]]])
        pts = coords[i][seq]
        legs = pts[1:] - pts[:-1]
        out[i] = np.sqrt(np.einsum("ij,ij->i", legs, legs)).sum()
    return out


def _rollout_cvrp(
    ptr,
    coords: np.ndarray,
    demands: np.ndarray,
    depots: np.ndarray,
    mode: str,
    rng: np.random.Generator | None,
    forced_first: np.ndarray | None,
    forced_actions: np.ndarray | None,
) -> RolloutBatch:
    """Decode city/depot actions until every city is served.

    The depot is masked while the vehicle sits at it, so routes are non-empty
    and the episode always terminates within 2n+1 steps. Rows that finish
    early keep emitting forced depot moves with probability exactly 1, which
    add exactly 0 to their log-prob.
    """
    b, n = coords.shape[0], coords.shape[1]
    rows = np.arange(b)
    is_city = np.ones((b, n), dtype=bool)
    is_city[rows, depots] = False
    served = np.zeros((b, n), dtype=bool)
    load = np.zeros(b)
    at_depot = np.ones(b, dtype=bool)
    done = np.zeros(b, dtype=bool)
    lps = []
    act_list = []
    finish_step = np.full(b, -1, dtype=np.int64)
    lean = isinstance(ptr, _LeanPointer)
    max_steps = 2 * n + 2 if forced_actions is None else forced_actions.shape[1]
    for step in range(max_steps):
        if done.all():
            break
        mask = served | (demands > (1.0 - load[:, None]) + CAPACITY_SLACK)
        mask[rows, depots] = at_depot
        mask[done] = True
        mask[done, depots[done]] = False
        cap = np.maximum(1.0 - load, 0.0)
        if forced_actions is not None:
            a = np.where(done, depots, forced_actions[:, step])
            skip_lp = step == 0 and forced_first is not None
            if not skip_lp:
                lps.append(ad.log_pick(ptr.probs(mask, capacity=cap), a))
        elif step == 0 and forced_first is not None:
            a = forced_first
        elif lean:
            a = _greedy_masked_argmax(ptr.logits_data(mask, capacity=cap), mask)
        else:
            probs = ptr.probs(mask, capacity=cap)
            a = _choose(probs.data, mode, rng)
            lps.append(ad.log_pick(probs, a))
        act_list.append(a)
        took_depot = a == depots
        city_rows = ~took_depot
        served[rows[city_rows], a[city_rows]] = True
        load = np.where(took_depot, 0.0, load + demands[rows, a] * city_rows)
        at_depot = took_depot
        newly_done = ~done & (served | ~is_city).all(axis=1)
        finish_step[newly_done] = step
        done = done | newly_done
        ptr.set_current(a)
    if not done.all():
        raise RuntimeError("cvrp decode failed to terminate")
    logp = ad.add_n(lps) if lps else _zero_logp(b)
    acts = np.stack(act_list, axis=1) if act_list else np.empty((b, 0), dtype=np.int64)
    action_rows = [acts[i, : finish_step[i] + 1] for i in range(b)]
    solutions = []
    for i in range(b):
        seq = action_rows[i]
        cuts = np.flatnonzero(seq == depots[i])
        routes = [r for r in np.split(seq, cuts) if r.size and not (r.size == 1 and r[0] == depots[i])]
        routes = [r[r != depots[i]] for r in routes]
        solutions.append(CvrpSolution(tuple(routes)))
    costs = _cvrp_route_costs(coords, depots, action_rows)
    return RolloutBatch(acts, logp, costs, solutions)


# ---------------------------------------------------------------------------
# rollout entry points


@dataclass(frozen=True)
class WaveInput:
    """One same-size instance stack for a shared-encoder rollout."""

    coords: np.ndarray
    demands: np.ndarray | None = None
    depots: np.ndarray | None = None


def rollout_waves(
    params: PolicyParams,
    waves: list,
    mode: str,
    rng: np.random.Generator | None = None,
    *,
    want_logp: bool = True,
    tiles: list | None = None,
    forced_firsts: list | None = None,
    forced_actions_list: list | None = None,
) -> list:
    """Roll out several same-size stacks through one shared encoder pass.

    ``tiles[i]`` repeats wave i's embeddings row-wise (cheap multi-start
    rollouts: the encoder runs once per distinct instance). Waves decode in
    order from one rng stream. Returns one RolloutBatch per wave.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    t = params.tensors
    scalars_parts = []
    dist_parts = []
    blocks = []
    start = dstart = 0
    for w in waves:
        sc, nd, _ = _batch_features(params.kind, params.invariant, w.coords, w.demands, w.depots)
        b, n = sc.shape[0], sc.shape[1]
        if n < 3:
            raise ValueError(f"need at least 3 nodes, got {n}")
        scalars_parts.append(sc.reshape(b * n, -1))
        dist_parts.append(nd.reshape(b * n * n, 1))
        blocks.append(_Block(start, b, n, dstart))
        start += b * n
        dstart += b * n * n
    h_rows = _encode_rows(
        t, np.concatenate(scalars_parts, axis=0), np.concatenate(dist_parts, axis=0), blocks
    )
    maps = _QueryMaps(t, params.kind)
    kg_rows = ad.linear(h_rows, t["dec.wgk"])
    vg_rows = ad.linear(h_rows, t["dec.wgv"])
    kl_rows = ad.linear(h_rows, t["dec.wlk"])
    hq_rows = ad.linear(h_rows, maps.w_cur_q)
    hf_rows = ad.linear(h_rows, maps.w_first_q)

    out = []
    for i, (w, blk) in enumerate(zip(waves, blocks)):
        b, n = blk.b, blk.n
        hbar = ad.mean(ad.rows_view(h_rows, blk.start, b, n), axis=1)
        parts = [
            hbar,
            _split_heads(ad.rows_view(kg_rows, blk.start, b, n), b, n),
            _split_heads(ad.rows_view(vg_rows, blk.start, b, n), b, n),
            ad.rows_view(kl_rows, blk.start, b, n),
            ad.rows_view(hq_rows, blk.start, b, n),
            ad.rows_view(hf_rows, blk.start, b, n),
        ]
        coords, demands, depots = w.coords, w.demands, w.depots
        tile = tiles[i] if tiles is not None else None
        if tile is not None and tile > 1:
            parts = [ad.repeat0(p, tile) for p in parts]
            coords = np.repeat(coords, tile, axis=0)
            demands = None if demands is None else np.repeat(demands, tile, axis=0)
            depots = None if depots is None else np.repeat(depots, tile, axis=0)
        ff = forced_firsts[i] if forced_firsts is not None else None
        fa = forced_actions_list[i] if forced_actions_list is not None else None
        lean = mode == "greedy" and not want_logp and fa is None
        ptr = (_LeanPointer if lean else _Pointer)(maps, *parts)
        if params.kind == TSP:
            out.append(_rollout_tsp(ptr, coords, mode, rng, ff, fa))
        else:
            out.append(_rollout_cvrp(ptr, coords, demands, depots, mode, rng, ff, fa))
    return out


def rollout_batch(
    params: PolicyParams,
    coords: np.ndarray,
    mode: str,
    rng: np.random.Generator | None = None,
    demands: np.ndarray | None = None,
    depots: np.ndarray | None = None,
    forced_first: np.ndarray | None = None,
    forced_actions: np.ndarray | None = None,
    want_logp: bool = True,
) -> RolloutBatch:
    """Encode and decode a stack of same-size instances in one pass.

    Runs on the active tape if one is recording; wrap in ad.no_grad() for
    inference. ``forced_actions`` replays a fixed action matrix (teacher
    forcing); ``forced_first`` pins the first move and drops its probability.
    """
    return rollout_waves(
        params,
        [WaveInput(coords, demands, depots)],
        mode,
        rng,
        want_logp=want_logp,
        forced_firsts=None if forced_first is None else [forced_first],
        forced_actions_list=None if forced_actions is None else [forced_actions],
    )[0]


def _solution_actions(instance: Instance, solution) -> np.ndarray:
    if instance.kind == TSP:
        if not isinstance(solution, Tour):
            raise ValueError("tsp solutions are Tours")
        if solution.n != instance.n:
            raise ValueError("tour does not cover this instance")
        return solution.order
    validate_cvrp_solution(instance, solution)
    parts = []
    for i, route in enumerate(solution.routes):
        if i:
            parts.append(np.array([instance.depot], dtype=np.int64))
        parts.append(route)
    return np.concatenate(parts)


def decode_step(params: PolicyParams, embeddings, state: DecodeState) -> np.ndarray:
    """Distribution over next nodes for one instance.

    ``embeddings`` is the (node_embeddings, graph_embedding) pair returned by
    encode(). The state's masks follow the rollout rules: visited nodes are
    excluded; for CVRP also cities above remaining capacity, and the depot
    while the vehicle is at it. A fully-masked CVRP state forces the depot
    (probability 1); for TSP at least one node is always free.
    """
    h, hbar = embeddings
    n = h.data.shape[0]
    hb = ad.reshape(h, (1, n, D_MODEL))
    gb = ad.reshape(hbar, (1, D_MODEL))
    ptr = _build_pointer(params.tensors, hb, gb, 1, n, params.kind)
    if state.current is not None:
        if state.first is not None and state.first != state.current:
            ptr.set_current(np.array([state.first]))
        ptr.set_current(np.array([state.current]))
    mask = np.array(state.visited, dtype=bool)[None, :]
    if params.kind == CVRP and mask.all() and state.depot is not None:
        forced = np.zeros(n)
        forced[state.depot] = 1.0
        return forced
    capacity = None
    if params.kind == CVRP:
        capacity = np.array([max(state.capacity, 0.0)])
    return ptr.probs(mask, capacity=capacity).data[0]


def rollout(
    params: PolicyParams,
    instance: Instance,
    mode: str,
    rng: np.random.Generator | None = None,
):
    """Decode one complete solution; returns (solution, log_prob)."""
    batch = rollout_batch(params, instance.coords[None], mode, rng, **_cvrp_kwargs(instance))
    return batch.solutions[0], float(batch.log_probs.data[0])


def _cvrp_kwargs(instance: Instance) -> dict:
    if instance.kind == CVRP:
        return {"demands": instance.demands[None], "depots": np.array([instance.depot])}
    return {}


def teacher_forced_log_prob(params: PolicyParams, instance: Instance, actions: np.ndarray) -> ad.Tensor:
    """Differentiable log-probability of an explicit action sequence."""
    batch = rollout_batch(
        params,
        instance.coords[None],
        "greedy",
        forced_actions=np.asarray(actions, dtype=np.int64)[None, :],
        forced_first=np.asarray(actions, dtype=np.int64)[None, 0] if instance.kind == TSP else None,
        **_cvrp_kwargs(instance),
    )
    return batch.log_probs


def log_prob(params: PolicyParams, instance: Instance, solution) -> float:
    """Log-probability the policy assigns to an existing solution."""
    actions = _solution_actions(instance, solution)
    return float(teacher_forced_log_prob(params, instance, actions).data[0])
