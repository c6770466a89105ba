"""Deterministic output writers: CSV tables, legacy VTK dumps, SVG charts.

CSV is the normative output: a schema comment line, a header row, and
17-significant-digit decimals, so identical configurations reproduce
byte-identical files.  Field dumps use legacy ASCII structured-points VTK
(fully specified byte format); the energy chart is a small static SVG.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spaces import SpaceSet, StateVector


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class CsvTable:
    """Rectangular numeric table with a versioned schema comment."""

    schema: str
    header: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def append(self, row) -> None:
        row = [float(x) for x in row]
        if len(row) != len(self.header):
            raise ValueError(f"row width {len(row)} != header width {len(self.header)}")
        self.rows.append(row)

    def validate(self) -> "CsvTable":
        if len(set(self.header)) != len(self.header):
            raise ValueError("header names must be unique")
        for row in self.rows:
            if len(row) != len(self.header):
                raise ValueError("table is not rectangular")
        return self

    def to_text(self) -> str:
        self.validate()
        lines = [f"# {self.schema}", ",".join(self.header)]
        lines.extend(",".join(fmt(x) for x in row) for row in self.rows)
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())
        return path


# ---------------------------------------------------------------------------
# legacy VTK structured points

def _sample_axis(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n + 1)


def write_vtk(path, spaces: SpaceSet, state: StateVector, title: str = "poroflux fields") -> Path:
    """Write all fields on a uniform sampling of the stacked box.

    Legacy VTK 2.0 ASCII, DATASET STRUCTURED_POINTS spanning both boxes;
    solid fields are zero below the interface and fluid fields above it.
    """
    grid = spaces.grid
    d = grid.spec.dimension
    n_lat = grid.spec.n_lat
    nz = 2 * max(grid.spec.n_b, grid.spec.n_f)
    lat_axes = [_sample_axis(2 * n_lat) for _ in range(d - 1)]
    z_axis = np.linspace(-1.0, 1.0, nz + 1)

    def eval_at(x: np.ndarray):
        zero_d = np.zeros(d)
        if x[-1] >= 0.0:
            cb, rb = spaces.U.locate(x)
            u = spaces.U.evaluate(state.u, np.array([cb]), rb[None, :])[0, 0]
            w = spaces.U.evaluate(state.w, np.array([cb]), rb[None, :])[0, 0]
            cp, rp = spaces.P.locate(x)
            p = spaces.P.evaluate(state.p, np.array([cp]), rp[None, :])[0, 0, 0]
            return u, w, p, zero_d, 0.0
        cv, rv = spaces.V.locate(x)
        v = spaces.V.evaluate(state.v, np.array([cv]), rv[None, :])[0, 0]
        ci, ri = spaces.PI.locate(x)
        pi = spaces.PI.evaluate(state.pi, np.array([ci]), ri[None, :])[0, 0, 0]
        return zero_d, zero_d, 0.0, v, pi

    # x fastest, z slowest, matching VTK structured-points point order
    points = []
    if d == 2:
        for z in z_axis:
            for x in lat_axes[0]:
                points.append(np.array([x, z]))
        dims = (len(lat_axes[0]), len(z_axis), 1)
        spacing = (lat_axes[0][1] - lat_axes[0][0], z_axis[1] - z_axis[0], 1.0)
        origin = (0.0, -1.0, 0.0)
    else:
        for z in z_axis:
            for y in lat_axes[1]:
                for x in lat_axes[0]:
                    points.append(np.array([x, y, z]))
        dims = (len(lat_axes[0]), len(lat_axes[1]), len(z_axis))
        spacing = (lat_axes[0][1] - lat_axes[0][0],
                   lat_axes[1][1] - lat_axes[1][0], z_axis[1] - z_axis[0])
        origin = (0.0, 0.0, -1.0)

    samples = [eval_at(x) for x in points]

    def vec3(v):
        out = np.zeros(3)
        if d == 2:
            out[0], out[1] = v[0], v[1]
        else:
            out[:] = v
        return out

    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
        f"ORIGIN {fmt(origin[0])} {fmt(origin[1])} {fmt(origin[2])}",
        f"SPACING {fmt(spacing[0])} {fmt(spacing[1])} {fmt(spacing[2])}",
        f"POINT_DATA {len(points)}",
    ]
    for name, idx in (("biot_pressure", 2), ("fluid_pressure", 4)):
        lines.append(f"SCALARS {name} double")
        lines.append("LOOKUP_TABLE default")
        lines.extend(fmt(s[idx]) for s in samples)
    for name, idx in (("displacement", 0), ("solid_velocity", 1), ("fluid_velocity", 3)):
        lines.append(f"VECTORS {name} double")
        lines.extend(" ".join(fmt(c) for c in vec3(s[idx])) for s in samples)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# SVG energy chart

def write_energy_svg(path, times, energy, dissipation_cum) -> Path:
    """Single-file line chart of e(t) and the cumulative dissipator."""
    times = np.asarray(times, dtype=float)
    series = [("e", np.asarray(energy, dtype=float), "#1f77b4"),
              ("d_cum", np.asarray(dissipation_cum, dtype=float), "#d62728")]
    width, height, m = 640, 400, 50
    t0, t1 = float(times.min()), float(times.max())
    lo = min(float(s.min()) for _, s, _ in series)
    hi = max(float(s.max()) for _, s, _ in series)
    if hi - lo < 1e-300:
        hi = lo + 1.0
    if t1 - t0 < 1e-300:
        t1 = t0 + 1.0

    def sx(t):
        return m + (t - t0) / (t1 - t0) * (width - 2 * m)

    def sy(v):
        return height - m - (v - lo) / (hi - lo) * (height - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 10}" font-size="12" text-anchor="middle">t</text>',
        f'<text x="{m}" y="{m - 10}" font-size="12">[{fmt(lo)}, {fmt(hi)}]</text>',
    ]
    for i, (label, vals, color) in enumerate(series):
        pts = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(times, vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - m - 60}" y="{m + 14 * (i + 1)}" '
                     f'font-size="12" fill="{color}">{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return path
