"""Minimal TSPLIB reader/writer for 2D Euclidean symmetric TSP files."""

from __future__ import annotations

import math

import numpy as np

from .instances import TSP, Instance, ParseError, Tour


def parse_tsplib(text: str) -> Instance:
    """Parse a TSPLIB file with EDGE_WEIGHT_TYPE EUC_2D into an Instance.

    Only TYPE: TSP with explicit node coordinates is supported; anything else
    raises ParseError naming the offending line.
    """
    fields: dict[str, str] = {}
    coords_by_id: dict[int, tuple[float, float]] = {}
    lines = text.splitlines()
    i = 0
    in_coords = False
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if in_coords:
            if line.upper() == "EOF":
                in_coords = False
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 'id x y', got {line!r}")
            try:
                node_id = int(parts[0])
                x, y = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if node_id in coords_by_id:
                raise ParseError(f"line {lineno}: duplicate node id {node_id}")
            coords_by_id[node_id] = (x, y)
            continue
        if line.upper() == "NODE_COORD_SECTION":
            in_coords = True
            continue
        if line.upper() == "EOF":
            continue
        if ":" in line:
            key, _, value = line.partition(":")
            fields[key.strip().upper()] = value.strip()
            continue
        raise ParseError(f"line {lineno}: unrecognized content {line!r}")

    file_type = fields.get("TYPE", "TSP").split()[0].upper() if fields.get("TYPE") else "TSP"
    if file_type != "TSP":
        raise ParseError(f"unsupported TYPE {fields.get('TYPE')!r}, only TSP is handled")
    weight_type = fields.get("EDGE_WEIGHT_TYPE", "").upper()
    if weight_type != "EUC_2D":
        raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {fields.get('EDGE_WEIGHT_TYPE')!r}, only EUC_2D is handled")
    if "DIMENSION" not in fields:
        raise ParseError("missing DIMENSION")
    try:
        n = int(fields["DIMENSION"])
    except ValueError as exc:
        raise ParseError(f"bad DIMENSION {fields['DIMENSION']!r}") from exc
    if len(coords_by_id) != n:
        raise ParseError(f"DIMENSION says {n} nodes, found {len(coords_by_id)} coordinates")
    expected = set(range(1, n + 1))
    if set(coords_by_id) != expected:
        raise ParseError("node ids must be exactly 1..DIMENSION")
    coords = np.array([coords_by_id[i] for i in range(1, n + 1)], dtype=np.float64)
    return Instance(TSP, coords, name=fields.get("NAME"))


def serialize_tsplib(instance: Instance, name: str | None = None) -> str:
    """Render an instance as a TSPLIB EUC_2D file; coordinates round-trip exactly."""
    if instance.kind != TSP:
        raise ValueError("only tsp instances serialize to TSPLIB")
    label = name or instance.name or "instance"
    out = [
        f"NAME : {label}",
        "TYPE : TSP",
        f"DIMENSION : {instance.n}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    for i, (x, y) in enumerate(instance.coords, start=1):
        out.append(f"{i} {float(x)!r} {float(y)!r}")
    out.append("EOF")
    return "\n".join(out) + "\n"


def tsplib_euc2d_length(instance: Instance, tour: Tour) -> int:
    """Tour length under TSPLIB's EUC_2D metric (each leg rounded to nearest int).

    This is the metric under which published optima such as berlin52's 7542
    are stated; it differs from the continuous Euclidean objective.
    """
    order = tour.order
    if order.shape[0] != instance.n:
        raise ValueError("tour does not cover this instance")
    total = 0
    pts = instance.coords
    for a, b in zip(order, np.roll(order, -1)):
        dx = pts[a, 0] - pts[b, 0]
        dy = pts[a, 1] - pts[b, 1]
        total += int(math.sqrt(dx * dx + dy * dy) + 0.5)
    return total
