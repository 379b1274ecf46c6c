"""CSV writers: RFC-4180 style, header row, full round-trip precision."""
from __future__ import annotations

import csv

import numpy as np


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _axis_header(dim):
    return [f"x{i + 1}" for i in range(dim)]


def density_to_csv(grid, path):
    """One row per cell: center coordinates, density value."""
    pts = grid.centers_mesh().reshape(-1, grid.dim)
    vals = grid.w.ravel()
    write_csv(path, _axis_header(grid.dim) + ["w"],
              (list(p) + [v] for p, v in zip(pts, vals)))


def histogram_to_csv(hist, path):
    """One row per cell: center coordinates, density, count, std error."""
    mesh = np.meshgrid(*hist.axes, indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, hist.dim)
    write_csv(path, _axis_header(hist.dim) + ["density", "count", "se"],
              (list(p) + [d, int(c), s] for p, d, c, s in
               zip(pts, hist.density.ravel(), hist.counts.ravel(),
                   hist.std_error.ravel())))


def current_to_csv(field, path):
    """One row per cell: center coordinates, current components."""
    grid = field.grid
    pts = grid.centers_mesh().reshape(-1, grid.dim)
    j = field.j_cell.reshape(-1, grid.dim)
    write_csv(path,
              _axis_header(grid.dim) + [f"j{i + 1}" for i in range(grid.dim)],
              (list(p) + list(row) for p, row in zip(pts, j)))


def ensemble_to_csv(ensemble, path):
    """One row per path per recorded time."""
    dim = ensemble.dim
    header = ["path", "time"] + _axis_header(dim) + ["absorbed"]

    def rows():
        for p in range(ensemble.n_paths):
            gone_at = ensemble.absorbed_time[p]
            for r, t in enumerate(ensemble.times):
                gone = ensemble.absorbed[p] and t >= gone_at - 1e-12
                yield [p, t] + list(ensemble.states[p, r]) + [bool(gone)]

    write_csv(path, header, rows())


def series_to_csv(series, path):
    """Displacement series: time, per-axis mean and standard error, norm."""
    dim = series.mean_displacement.shape[1]
    header = (["time"] + [f"mean_dx{i + 1}" for i in range(dim)]
              + [f"se{i + 1}" for i in range(dim)] + ["norm"])
    write_csv(path, header,
              ([t] + list(m) + list(s) + [n] for t, m, s, n in
               zip(series.times, series.mean_displacement,
                   series.std_error, series.deviation_norm)))
