"""CSV emission and reading with fixed formatting, plus run manifests.

Floats are written with ``format(x, ".12g")`` (12 significant digits,
shortest form, always '.' as decimal separator) so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .empirical_law import SegmentEnsemble
from .segment_core import GridPath

PATH_HEADER = ("t", "dim_index", "value")
ENSEMBLE_HEADER = ("sample_id", "theta_index", "dim_index", "value")
PATHS_HEADER = ("sample_id", "node", "dim_index", "value")
PICARD_HEADER = ("iter", "flow_distance", "path_distance")
GALERKIN_MODES_HEADER = ("k", "lambda_k", "mean_cK", "var_ck", "var_ck_theory")
GALERKIN_SWEEP_HEADER = ("n", "v_integral", "a_dual", "b_hs", "b_count", "h_sup")
BOUNDS_HEADER = ("bound_name", "lhs", "stderr", "rhs", "margin", "pass")
CONDITIONS_HEADER = ("condition", "worst_margin", "violating_trials", "pass")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_rows(file, header, rows):
    """Write ``rows`` (iterables of cells) to a path or open text stream."""
    if isinstance(file, (str, os.PathLike)):
        with open(file, "w", newline="", encoding="utf-8") as fh:
            return write_rows(fh, header, rows)
    w = csv.writer(file, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def read_rows(file) -> tuple[list[str], list[list[str]]]:
    with open(file, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{file}: empty CSV")
    return rows[0], rows[1:]


def _expect(header, expected, file):
    if tuple(header) != tuple(expected):
        raise ValueError(f"{file}: expected header {','.join(expected)}, got {','.join(header)}")


def write_path_csv(path: GridPath, file):
    times = path.grid.times()
    rows = ((times[k], j, path.values[k, j]) for k in range(path.grid.n_nodes) for j in range(path.dim))
    write_rows(file, PATH_HEADER, rows)


def write_ensemble_csv(ens: SegmentEnsemble, file):
    v = ens.values
    rows = ((i, k, j, v[i, k, j]) for i in range(v.shape[0]) for k in range(v.shape[1]) for j in range(v.shape[2]))
    write_rows(file, ENSEMBLE_HEADER, rows)


def read_ensemble_csv(file, r0: float = 1.0) -> SegmentEnsemble:
    """Read an ensemble file; ``r0`` fixes the node spacing (dt = r0 / m)."""
    header, rows = read_rows(file)
    _expect(header, ENSEMBLE_HEADER, file)
    if not rows:
        raise ValueError(f"{file}: no samples")
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    vals = np.array([float(r[3]) for r in rows])
    shape = tuple(idx.max(axis=0) + 1)
    out = np.full(shape, np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    if np.isnan(out).any() or len(rows) != out.size:
        raise ValueError(f"{file}: incomplete or duplicated entries")
    m = shape[1] - 1
    if m < 1:
        raise ValueError(f"{file}: segments need at least two nodes")
    return SegmentEnsemble(r0, r0 / m, m, out)


def write_paths_csv(paths: np.ndarray, file):
    n, nodes, d = paths.shape
    rows = ((i, k, j, paths[i, k, j]) for i in range(n) for k in range(nodes) for j in range(d))
    write_rows(file, PATHS_HEADER, rows)


def read_paths_csv(file) -> np.ndarray:
    header, rows = read_rows(file)
    _expect(header, PATHS_HEADER, file)
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    out = np.full(tuple(idx.max(axis=0) + 1), np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = [float(r[3]) for r in rows]
    if np.isnan(out).any():
        raise ValueError(f"{file}: incomplete path array")
    return out


def write_moments_csv(paths: np.ndarray, m: int, dt: float, p: float, file):
    """Per horizon node: component means, mean sup-norm² and mean L^p-norm^p of the segments."""
    from .segment_core import window_lp_p, window_sup_sq

    n, nodes, d = paths.shape
    header = ("t",) + tuple(f"mean_{j + 1}" for j in range(d)) + ("sup_sq_moment", "lp_moment")
    rows = []
    for k in range(m, nodes):
        win = paths[:, k - m : k + 1]
        rows.append([(k - m) * dt, *paths[:, k].mean(axis=0), window_sup_sq(win).mean(),
                     window_lp_p(win, dt, p).mean()])
    write_rows(file, header, rows)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(directory, config_digest: str, seed: int, version: str, files) -> Path:
    """Checksums of ``files`` (names inside ``directory``); written last."""
    directory = Path(directory)
    manifest = {
        "config_digest": config_digest,
        "seed": seed,
        "version": version,
        "files": {name: sha256_file(directory / name) for name in sorted(files)},
    }
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
