"""Artifact writers: VTK legacy ASCII snapshots, CSV time series and line
tables, npz-serialized moment summaries, and reproducibility manifests.

All writers go through an atomic temp-file + rename so partially written
artifacts never appear under their final name.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import asdict

import numpy as np
import yaml

from .mesh import Mesh
from .montecarlo import ComparisonReport, LineTable, element_average, sigma_norm
from .solver import History
from .tsm import UqSummary


def _atomic_write(path, data: str | bytes):
    mode = "wb" if isinstance(data, bytes) else "w"
    tmp = f"{path}.tmp"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# VTK legacy ASCII
# ---------------------------------------------------------------------------


def write_vtk(path, mesh: Mesh, point_vectors: dict | None = None,
              cell_scalars: dict | None = None, title: str = "tsmfem output"):
    """Unstructured-grid snapshot: hexahedra with nodal vector fields and
    per-element scalar fields."""
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(title[:255] + "\n")
    out.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {mesh.n_nodes} double\n")
    for p in mesh.nodes:
        out.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    ne = mesh.n_elements
    out.write(f"CELLS {ne} {9 * ne}\n")
    for e in mesh.elements:
        out.write("8 " + " ".join(str(int(v)) for v in e) + "\n")
    out.write(f"CELL_TYPES {ne}\n")
    out.write("\n".join(["12"] * ne) + "\n")

    if point_vectors:
        out.write(f"POINT_DATA {mesh.n_nodes}\n")
        for name, arr in point_vectors.items():
            out.write(f"VECTORS {name} double\n")
            for v in np.asarray(arr):
                out.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
    if cell_scalars:
        out.write(f"CELL_DATA {ne}\n")
        for name, arr in cell_scalars.items():
            out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            out.write("\n".join(f"{float(v):.17g}" for v in np.asarray(arr)) + "\n")
    _atomic_write(path, out.getvalue())


def history_to_vtk(outdir, mesh: Mesh, hist: History, prefix: str = "snapshot"):
    """One VTK file per snapshot: displacement plus cell-averaged damage,
    damage function, and stress norm."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for i, t in enumerate(hist.times):
        cell = {
            "damage": element_average(hist.d[i]),
            "damage_function": element_average(np.exp(-hist.d[i])),
            "stress_norm": element_average(sigma_norm(hist.sigma[i])),
        }
        p = os.path.join(outdir, f"{prefix}_{i:04d}.vtk")
        write_vtk(p, mesh, {"displacement": hist.u[i]}, cell,
                  title=f"t={t:.9g}s")
        paths.append(p)
    return paths


def summary_to_vtk(outdir, mesh: Mesh, uq: UqSummary, prefix: str = "uq"):
    """One VTK file per snapshot with expectation and Std cell fields."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for i, t in enumerate(uq.times):
        cell = {
            "f_mean": element_average(uq.f_mean[i]),
            "f_std": element_average(uq.f_std[i]),
            "d_mean": element_average(uq.d_mean[i]),
            "d_std": element_average(uq.d_std[i]),
            "stress_norm_mean": element_average(sigma_norm(uq.sigma_mean[i])),
            "stress_norm_std": element_average(sigma_norm(uq.sigma_std[i])),
        }
        p = os.path.join(outdir, f"{prefix}_{i:04d}.vtk")
        write_vtk(p, mesh, None, cell, title=f"t={t:.9g}s")
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _csv_string(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_force_csv(path, times, forces: np.ndarray):
    """Reaction series: time, Fx, Fy, Fz."""
    rows = [(f"{t:.17g}", f"{f[0]:.17g}", f"{f[1]:.17g}", f"{f[2]:.17g}")
            for t, f in zip(times, forces)]
    _atomic_write(path, _csv_string(["time", "Fx", "Fy", "Fz"], rows))


def write_force_stats_csv(path, uq: UqSummary):
    rows = [(f"{t:.17g}",
             *(f"{v:.17g}" for v in uq.force_mean[i]),
             *(f"{v:.17g}" for v in uq.force_std[i]))
            for i, t in enumerate(uq.force_times)]
    header = ["time", "Fx_mean", "Fy_mean", "Fz_mean", "Fx_std", "Fy_std", "Fz_std"]
    _atomic_write(path, _csv_string(header, rows))


def write_line_csv(path, table: LineTable):
    """Per-element line extraction, one row per (snapshot, path element)."""
    rows = []
    for i, t in enumerate(table.times):
        for j, eid in enumerate(table.element_ids):
            rows.append((f"{t:.17g}", int(eid), f"{table.positions[j, 0]:.17g}",
                         f"{table.f_mean[i, j]:.17g}", f"{table.f_std[i, j]:.17g}",
                         f"{table.snorm_mean[i, j]:.17g}", f"{table.snorm_std[i, j]:.17g}"))
    header = ["time", "element", "x", "f_mean", "f_std", "stress_norm_mean", "stress_norm_std"]
    _atomic_write(path, _csv_string(header, rows))


def write_comparison_csv(outdir, report: ComparisonReport):
    os.makedirs(outdir, exist_ok=True)
    rows = []
    S, ne = report.f_mean_abs_err.shape
    for i in range(S):
        for e in range(ne):
            rows.append((f"{report.times[i]:.17g}", e, int(report.masked[i, e]),
                         f"{report.f_mean_abs_err[i, e]:.17g}",
                         f"{report.f_std_rel_err[i, e]:.17g}",
                         f"{report.snorm_mean_rel_err[i, e]:.17g}",
                         f"{report.snorm_std_rel_err[i, e]:.17g}"))
    header = ["time", "element", "masked", "f_mean_abs_err", "f_std_rel_err",
              "snorm_mean_rel_err", "snorm_std_rel_err"]
    _atomic_write(os.path.join(outdir, "comparison_elements.csv"),
                  _csv_string(header, rows))
    summary = dict(report.summary)
    summary["force_mean_rel_err"] = report.force_mean_rel_err
    summary["force_std_rel_err"] = report.force_std_rel_err
    if report.timings:
        summary["timings"] = report.timings
    _atomic_write(os.path.join(outdir, "comparison_summary.yaml"),
                  yaml.safe_dump(summary, sort_keys=True))


# ---------------------------------------------------------------------------
# moment summaries (npz) and manifests
# ---------------------------------------------------------------------------


def save_summary(path, uq: UqSummary):
    buf = io.BytesIO()
    np.savez_compressed(
        buf,
        times=uq.times, d_mean=uq.d_mean, d_std=uq.d_std,
        f_mean=uq.f_mean, f_std=uq.f_std,
        sigma_mean=uq.sigma_mean, sigma_std=uq.sigma_std,
        force_times=uq.force_times, force_mean=uq.force_mean,
        force_std=uq.force_std,
        force_set=np.array(uq.force_set),
        meta=np.array(yaml.safe_dump(uq.meta)),
    )
    _atomic_write(path, buf.getvalue())


def load_summary(path) -> UqSummary:
    with np.load(path, allow_pickle=False) as z:
        return UqSummary(
            times=z["times"], d_mean=z["d_mean"], d_std=z["d_std"],
            f_mean=z["f_mean"], f_std=z["f_std"],
            sigma_mean=z["sigma_mean"], sigma_std=z["sigma_std"],
            force_times=z["force_times"], force_mean=z["force_mean"],
            force_std=z["force_std"],
            force_set=str(z["force_set"]),
            meta=yaml.safe_load(str(z["meta"])),
        )


def _plain(obj):
    """Recursively strip numpy types so yaml.safe_dump accepts the tree."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def config_hash(config: dict) -> str:
    canon = yaml.safe_dump(_plain(config), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(path, config: dict, *, command: str, wall_times: dict,
                   seeds: dict | None = None, extra: dict | None = None):
    """Everything needed to reproduce the run: resolved config and its hash,
    code/library versions, seeds, and wall-clock accounting."""
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config": _plain(config),
        "config_sha256": config_hash(config),
        "versions": {"tsmfem": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "seeds": _plain(seeds or {}),
        "wall_times_s": {k: float(v) for k, v in wall_times.items()},
    }
    if extra:
        manifest.update(_plain(extra))
    _atomic_write(path, yaml.safe_dump(manifest, sort_keys=False))


def read_manifest(path) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh)
