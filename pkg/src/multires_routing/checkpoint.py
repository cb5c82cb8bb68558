"""Binary checkpoints: policy tensors, Adam moments, config, baseline state.

Layout (integers little-endian):

    magic          8 bytes  b"MRCKPT01"
    header length  u64
    header         JSON utf-8, sorted keys, compact separators
    array count    u64
    per array, sorted by name:
        name length  u16, then utf-8 name
        dtype tag    u8 (0 float64, 1 int64)
        ndim         u8
        shape        ndim x u64
        payload      C-order raw bytes
    crc32          u32 over everything before it

The serialization is canonical (sorted names, compact JSON), so
save -> load -> save reproduces a file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import policy as PO
from .training import GREEDY_ROLLOUT, POMO_SHARED, BaselineState, TrainConfig

MAGIC = b"MRCKPT01"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_DTYPE_TAGS = {np.dtype("<f8"): 0, np.dtype("<i8"): 1}


class CheckpointError(ValueError):
    """Corrupt container or a file whose hyperparameters do not match."""


@dataclass
class Checkpoint:
    """Everything needed to resume a run exactly where it stopped."""

    params: PO.PolicyParams
    adam: ad.AdamState | None
    config: TrainConfig | None
    baseline: BaselineState | None
    epoch: int
    seed: int


# ---------------------------------------------------------------------------
# encoding


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.float64:
        tag = 0
    elif arr.dtype == np.int64:
        tag = 1
    else:
        raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
    encoded = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded)), encoded, struct.pack("<BB", tag, arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
    parts.append(arr.astype(_DTYPES[tag], copy=False).tobytes(order="C"))
    return b"".join(parts)


def _collect_arrays(params, adam, baseline) -> dict:
    arrays = {f"params/{k}": t.data for k, t in params.tensors.items()}
    if adam is not None:
        arrays.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in adam.v.items()})
    if baseline is not None and baseline.mode == GREEDY_ROLLOUT:
        arrays.update({f"baseline.params/{k}": t.data for k, t in baseline.frozen.tensors.items()})
        val = baseline.val_arrays
        arrays["baseline.val/coords"] = val["coords"]
        if val["demands"] is not None:
            arrays["baseline.val/demands"] = val["demands"]
            arrays["baseline.val/depots"] = val["depots"]
    return arrays


def save_checkpoint(
    path,
    params: PO.PolicyParams,
    *,
    adam: ad.AdamState | None = None,
    config: TrainConfig | None = None,
    baseline: BaselineState | None = None,
    epoch: int = 0,
    seed: int = 0,
) -> None:
    header = {
        "version": FORMAT_VERSION,
        "kind": params.kind,
        "invariant": params.invariant,
        "hyper": params.hyper,
        "epoch": int(epoch),
        "seed": int(seed),
        "adam_t": None if adam is None else int(adam.t),
        "config": None if config is None else dataclasses.asdict(config),
        "baseline": None
        if baseline is None
        else {
            "mode": baseline.mode,
            "pomo_starts": int(baseline.pomo_starts),
            "val_cost": float(baseline.val_cost),
        },
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = _collect_arrays(params, adam, baseline)
    parts = [MAGIC, struct.pack("<Q", len(head)), head, struct.pack("<Q", len(arrays))]
    for name in sorted(arrays):
        parts.append(_pack_array(name, arrays[name]))
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


# ---------------------------------------------------------------------------
# decoding


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.at : self.at + n]
        self.at += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_arrays(cur: _Cursor, count: int) -> dict:
    arrays = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        tag, ndim = cur.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"array {name!r} has unknown dtype tag {tag}")
        shape = cur.unpack(f"<{ndim}Q") if ndim else ()
        dtype = _DTYPES[tag]
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = cur.take(n_items * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays


def _expected_hyper(kind: str, invariant: bool) -> dict:
    return {
        "kind": kind,
        "invariant": invariant,
        "n_layers": PO.N_LAYERS,
        "n_heads": PO.N_HEADS,
        "head_dim": PO.HEAD_DIM,
        "d_model": PO.D_MODEL,
        "ff_dim": PO.FF_DIM,
        "feature_dim": PO.feature_dim(kind, invariant),
    }


def _check_hyper(header: dict) -> None:
    expected = _expected_hyper(header["kind"], header["invariant"])
    saved = header.get("hyper")
    if saved != expected:
        diffs = sorted(
            k for k in set(expected) | set(saved or {}) if (saved or {}).get(k) != expected.get(k)
        )
        raise CheckpointError(
            "checkpoint hyperparameters do not match this build: "
            + ", ".join(f"{k}={None if saved is None else saved.get(k)!r} (expected {expected.get(k)!r})" for k in diffs)
        )


def _tensors_from(arrays: dict, prefix: str, template: dict, what: str) -> dict:
    names = {k[len(prefix):] for k in arrays if k.startswith(prefix)}
    if names != set(template):
        missing = sorted(set(template) - names)
        extra = sorted(names - set(template))
        raise CheckpointError(f"{what} tensor names mismatch: missing {missing}, unexpected {extra}")
    out = {}
    for name in template:
        arr = arrays[prefix + name]
        if arr.shape != template[name]:
            raise CheckpointError(
                f"{what} tensor {name!r} has shape {arr.shape}, expected {template[name]}"
            )
        out[name] = arr
    return out


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError("truncated checkpoint file")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint file is corrupt (crc mismatch)")
    cur = _Cursor(blob[:-4])
    cur.take(len(MAGIC))
    (head_len,) = cur.unpack("<Q")
    try:
        header = json.loads(cur.take(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')!r}, expected {FORMAT_VERSION}"
        )
    _check_hyper(header)
    kind, invariant = header["kind"], header["invariant"]
    (count,) = cur.unpack("<Q")
    arrays = _read_arrays(cur, count)
    if cur.at != len(cur.blob):
        raise CheckpointError("trailing bytes after the last array")

    template = {
        k: t.data.shape
        for k, t in PO.init_params(kind, np.random.default_rng(0), invariant=invariant).tensors.items()
    }
    p_arrays = _tensors_from(arrays, "params/", template, "parameter")
    params = PO.PolicyParams(
        kind=kind,
        invariant=invariant,
        tensors={k: ad.Tensor(v, requires_grad=True) for k, v in p_arrays.items()},
    )

    adam = None
    if header["adam_t"] is not None:
        adam = ad.AdamState(
            m=_tensors_from(arrays, "adam.m/", template, "adam.m"),
            v=_tensors_from(arrays, "adam.v/", template, "adam.v"),
            t=int(header["adam_t"]),
        )

    config = None
    if header["config"] is not None:
        try:
            config = TrainConfig(**header["config"])
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"bad training config in checkpoint: {exc}") from exc

    baseline = None
    binfo = header["baseline"]
    if binfo is not None:
        if binfo["mode"] == POMO_SHARED:
            baseline = BaselineState(mode=POMO_SHARED, pomo_starts=int(binfo["pomo_starts"]))
        elif binfo["mode"] == GREEDY_ROLLOUT:
            f_arrays = _tensors_from(arrays, "baseline.params/", template, "baseline")
            frozen = PO.PolicyParams(
                kind=kind,
                invariant=invariant,
                tensors={k: ad.Tensor(v, requires_grad=True) for k, v in f_arrays.items()},
            )
            if "baseline.val/coords" not in arrays:
                raise CheckpointError("greedy-rollout baseline is missing its validation set")
            val = {
                "coords": arrays["baseline.val/coords"],
                "demands": arrays.get("baseline.val/demands"),
                "depots": arrays.get("baseline.val/depots"),
            }
            baseline = BaselineState(
                mode=GREEDY_ROLLOUT,
                frozen=frozen,
                val_arrays=val,
                val_cost=float(binfo["val_cost"]),
            )
        else:
            raise CheckpointError(f"unknown baseline mode {binfo['mode']!r}")

    return Checkpoint(
        params=params,
        adam=adam,
        config=config,
        baseline=baseline,
        epoch=int(header["epoch"]),
        seed=int(header["seed"]),
    )
