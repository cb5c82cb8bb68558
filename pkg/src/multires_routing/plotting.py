"""Static SVG renderings of instances, tours, routes, and cluster colorings.

Pure string assembly; a plot shows city points, an optional closed tour or
depot-anchored routes, and optional per-cluster colors. The world y-axis
points up, so coordinates are flipped once into canvas space.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .instances import CVRP, CvrpSolution, Instance, Tour

PALETTE = (
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
    "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
)
CITY_RADIUS = 4.0
DEPOT_HALF = 6.0
STROKE = 1.6


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    """Uniform world-to-pixel map over the instance's bounding box."""

    def __init__(self, coords: np.ndarray, size: float, margin: float):
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        scale = (size - 2 * margin) / float(span.max())
        self.lo = lo
        self.scale = scale
        self.margin = margin
        self.width = 2 * margin + scale * float(span[0])
        self.height = 2 * margin + scale * float(span[1])

    def xy(self, p) -> tuple[float, float]:
        x = self.margin + self.scale * (float(p[0]) - float(self.lo[0]))
        y = self.height - (self.margin + self.scale * (float(p[1]) - float(self.lo[1])))
        return x, y

    def points(self, pts: np.ndarray) -> str:
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self.xy(p) for p in pts))


def _route_polygons(instance: Instance, solution, canvas: _Canvas) -> list:
    """One closed polygon per loop: the tour itself, or depot-cities-depot."""
    shapes = []
    if isinstance(solution, Tour):
        pts = instance.coords[solution.order]
        shapes.append((canvas.points(pts), PALETTE[0]))
    elif isinstance(solution, CvrpSolution):
        depot = instance.coords[instance.depot][None, :]
        for i, route in enumerate(solution.routes):
            loop = np.concatenate([depot, instance.coords[route]], axis=0)
            shapes.append((canvas.points(loop), PALETTE[i % len(PALETTE)]))
    elif solution is not None:
        raise TypeError(f"unsupported solution type {type(solution).__name__}")
    return shapes


def svg_plot(
    instance: Instance,
    solution=None,
    assignment: np.ndarray | None = None,
    *,
    size: float = 480.0,
    margin: float = 24.0,
) -> str:
    """Render one instance as a standalone SVG document.

    ``solution`` draws the tour (one closed polygon) or the routes (one
    polygon each); ``assignment`` colors city points by cluster id. The CVRP
    depot is always the black square.
    """
    canvas = _Canvas(instance.coords, size, margin)
    cities = instance.city_indices()
    if assignment is not None:
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (cities.shape[0],):
            raise ValueError(
                f"assignment must cover the {cities.shape[0]} cities, got {assignment.shape}"
            )
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(canvas.width)}" '
        f'height="{_fmt(canvas.height)}" viewBox="0 0 {_fmt(canvas.width)} {_fmt(canvas.height)}">'
    ]
    if instance.name:
        lines.append(f"<title>{instance.name}</title>")
    lines.append('<rect width="100%" height="100%" fill="white"/>')
    for pts, color in _route_polygons(instance, solution, canvas):
        lines.append(
            f'<polygon points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(STROKE)}" stroke-linejoin="round"/>'
        )
    for j, c in enumerate(cities):
        x, y = canvas.xy(instance.coords[c])
        color = "#222222" if assignment is None else PALETTE[int(assignment[j]) % len(PALETTE)]
        lines.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(CITY_RADIUS)}" fill="{color}"/>')
    if instance.kind == CVRP:
        x, y = canvas.xy(instance.coords[instance.depot])
        lines.append(
            f'<rect x="{_fmt(x - DEPOT_HALF)}" y="{_fmt(y - DEPOT_HALF)}" '
            f'width="{_fmt(2 * DEPOT_HALF)}" height="{_fmt(2 * DEPOT_HALF)}" fill="#000000"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_plots(
    instances,
    out_dir,
    solutions=None,
    assignments=None,
    *,
    prefix: str = "instance",
    size: float = 480.0,
) -> list:
    """Write one SVG per instance into ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    width = max(4, len(str(max(len(list(instances)) - 1, 0))))
    instances = list(instances)
    for i, inst in enumerate(instances):
        sol = solutions[i] if solutions is not None else None
        asg = assignments[i] if assignments is not None else None
        path = out_dir / f"{prefix}-{i:0{width}d}.svg"
        path.write_text(svg_plot(inst, sol, asg, size=size), encoding="utf-8")
        paths.append(path)
    return paths
