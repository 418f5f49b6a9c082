"""File formats: points CSV, JSON bundles, deformation grids and statistics CSV.

Every written file carries the package version and a config hash: JSON files
in a ``meta`` entry, CSV files in a leading ``#`` comment line.
"""
import csv
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmptyInput, ParseError
from .varifold import PointData

COORDS = ("x", "y", "z")


def _meta_line(config_hash):
    return f"# ivlddmm {__version__} config {config_hash or '-'}"


def _data_lines(path):
    """(line number, row) pairs, skipping blanks and '#' comments."""
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, next(csv.reader([line]))


def _number(text, lineno):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", lineno) from None


def read_points_csv(path):
    """Points in long (x,y[,z],gene,count), wide (one column per gene) or label form."""
    rows = _data_lines(path)
    try:
        hline, header = next(rows)
    except StopIteration:
        raise EmptyInput(f"{path} is empty") from None
    header = [h.strip() for h in header]
    low = [h.lower() for h in header]
    if low[:2] != ["x", "y"]:
        raise ParseError("header must start with x,y", hline)
    d = 3 if len(low) > 2 and low[2] == "z" else 2
    rest = low[d:]
    if not rest:
        raise ParseError("no feature columns after the coordinates", hline)
    if rest == ["gene", "count"]:
        kind = "long"
    elif rest == ["label"]:
        kind = "label"
    else:
        kind = "wide"
    ncol = len(header)
    pos, feats = [], []
    lines = []
    for lineno, row in rows:
        lines.append(lineno)
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} fields, got {len(row)}", lineno)
        pos.append([_number(v, lineno) for v in row[:d]])
        if kind == "wide":
            feats.append([_number(v, lineno) for v in row[d:]])
        elif kind == "long":
            feats.append((row[d].strip(), _number(row[d + 1], lineno), lineno))
        else:
            feats.append(row[d].strip())
        if not np.all(np.isfinite(pos[-1])):
            raise ParseError("non-finite coordinate", lineno)
    if not pos:
        raise EmptyInput(f"{path} has a header but no records")
    pos = np.asarray(pos)
    if kind == "wide":
        counts = np.asarray(feats)
        if np.any(counts < 0):
            raise ParseError("negative count", lines[int(np.argmax((counts < 0).any(axis=1)))])
        return PointData(pos, tuple(header[d:]), counts=counts)
    if kind == "label":
        names = tuple(OrderedDict.fromkeys(feats))
        index = {n: i for i, n in enumerate(names)}
        return PointData(pos, names, labels=np.array([index[f] for f in feats]))
    # long form: records at the same position belong to one point
    genes = tuple(OrderedDict.fromkeys(f[0] for f in feats))
    gidx = {g: i for i, g in enumerate(genes)}
    keys, inverse = np.unique(pos, axis=0, return_inverse=True)
    counts = np.zeros((len(keys), len(genes)))
    for r, (g, c, lineno) in zip(inverse.reshape(-1), feats):
        if c < 0:
            raise ParseError("negative count", lineno)
        counts[r, gidx[g]] += c
    return PointData(keys, genes, counts=counts)


def write_points_csv(path, points, config_hash=None):
    d = points.dim
    with open(path, "w", newline="") as fh:
        fh.write(_meta_line(config_hash) + "\n")
        w = csv.writer(fh)
        if points.labels is not None:
            w.writerow(list(COORDS[:d]) + ["label"])
            for p, lab in zip(points.positions, points.labels):
                w.writerow([repr(float(v)) for v in p] + [points.names[lab]])
        else:
            w.writerow(list(COORDS[:d]) + list(points.names))
            for p, c in zip(points.positions, points.counts):
                w.writerow([repr(float(v)) for v in p] + [repr(float(v)) for v in c])


def realization_points(realization):
    return PointData(realization.positions.reshape(-1, realization.positions.shape[1]),
                     realization.features.names, labels=realization.marks)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, payload, config_hash=None):
    data = dict(payload)
    data["meta"] = {"version": __version__, "config_hash": config_hash}
    Path(path).write_text(json.dumps(_jsonable(data), indent=1))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None


def write_csv(path, header, rows, config_hash=None):
    with open(path, "w", newline="") as fh:
        fh.write(_meta_line(config_hash) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv_table(path):
    rows = list(_data_lines(path))
    if not rows:
        raise EmptyInput(f"{path} is empty")
    header = rows[0][1]
    return header, [r for _, r in rows[1:]]


def write_grid_csv(path, probes, images, config_hash=None):
    d = probes.shape[1]
    header = list("uvw"[:d]) + list(COORDS[:d])
    write_csv(path, header, np.hstack([probes, images]).tolist(), config_hash)


def write_statistics_csv(path, field, config_hash=None):
    header = ["region_id", "feature_set_id", "n1", "n2", "chi1", "chi2", "p_hat", "p", "T"]
    write_csv(path, header, field.rows(), config_hash)


def regular_probes(lo, hi, n):
    """n points per axis on the box [lo, hi]."""
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)
