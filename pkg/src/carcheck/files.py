"""JSON and CSV formats for models, densities, joints and sample batches.

Floats are written with Python's shortest round-trip representation, so a
file reloads to the identical binary value.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .coarsening import CoarseningJoint, build_joint
from .dist_core import BaseSpace, Density, SpaceMismatchError
from .mechanisms import SampleBatch

MARGINAL_TOL = 1e-9


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    return data


def write_json(obj, path=None, indent: int | None = None) -> str:
    text = json.dumps(obj, indent=indent, ensure_ascii=False)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def _field(data: dict, key: str, where: str):
    if key not in data:
        raise FormatError(f"{where}: missing field {key!r}")
    return data[key]


def model_to_dict(j: CoarseningJoint) -> dict:
    return {
        "y_labels": list(j.y_space.labels),
        "x_labels": list(j.x_space.labels),
        "joint": [_floats(row) for row in j.table],
        "q0": _floats(j.q0),
        "p0": _floats(j.p0),
    }


def model_from_dict(data: dict, where: str = "model") -> CoarseningJoint:
    y = _field(data, "y_labels", where)
    x = _field(data, "x_labels", where)
    try:
        table = np.array(_field(data, "joint", where), dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: 'joint' must be a numeric matrix") from None
    j = build_joint(table, y, x)
    for key, computed in (("q0", j.q0), ("p0", j.p0)):
        if key in data:
            given = np.asarray(data[key], dtype=float)
            if given.shape != computed.shape:
                raise FormatError(f"{where}: {key!r} has the wrong length")
            gap = float(np.max(np.abs(given - computed)))
            if gap > MARGINAL_TOL:
                raise FormatError(
                    f"{where}: {key!r} differs from the table marginal by {gap:.3g}"
                )
    return j


def load_model(path) -> CoarseningJoint:
    return model_from_dict(read_json(path), str(path))


def save_model(j: CoarseningJoint, path) -> None:
    write_json(model_to_dict(j), path)


def density_to_dict(d: Density) -> dict:
    return {
        "labels": list(d.space.labels),
        "weights": _floats(d.space.weights),
        "values": _floats(d.values),
    }


def _check_against(data: dict, space: BaseSpace, where: str) -> None:
    if "labels" in data and [str(l) for l in data["labels"]] != list(space.labels):
        raise SpaceMismatchError(f"{where}: labels do not match the model")
    if "weights" in data:
        w = np.asarray(data["weights"], dtype=float)
        if w.shape != space.weights.shape or np.max(np.abs(w - space.weights)) > MARGINAL_TOL:
            raise SpaceMismatchError(f"{where}: weights do not match the model")


def load_vector(path, space: BaseSpace) -> np.ndarray:
    """Raw ``values`` from a density-style file, matched positionally to ``space``."""
    data = read_json(path)
    _check_against(data, space, str(path))
    v = np.asarray(_field(data, "values", str(path)), dtype=float)
    if v.shape != (len(space),):
        raise SpaceMismatchError(f"{path}: expected {len(space)} values, got {v.size}")
    return v


def load_density(path, space: BaseSpace | None = None) -> Density:
    """Read a density; without ``space`` the file must carry labels and weights."""
    if space is not None:
        return Density(space, load_vector(path, space))
    data = read_json(path)
    w = _field(data, "weights", str(path))
    labels = data.get("labels", [str(i + 1) for i in range(len(w))])
    return Density(BaseSpace(labels, w), _field(data, "values", str(path)))


def load_table(path) -> np.ndarray:
    data = read_json(path)
    try:
        return np.array(_field(data, "joint", str(path)), dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: 'joint' must be a numeric matrix") from None


def write_samples(batch: SampleBatch, path) -> None:
    header = "x_index" if batch.kind == "index" else "x_value"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([header])
        if batch.kind == "index":
            w.writerows([int(v)] for v in batch.records)
        else:
            w.writerows([repr(float(v))] for v in batch.records)


def read_samples(path, seed: int = -1) -> SampleBatch:
    """Read a one-column samples file; the header decides the record kind."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty samples file")
    header = rows[0][0].strip() if rows[0] else ""
    body = [r[0] for r in rows[1:] if r]
    try:
        if header == "x_index":
            return SampleBatch(np.array([int(v) for v in body], dtype=int), seed, "index")
        if header == "x_value":
            return SampleBatch(np.array([float(v) for v in body], dtype=float), seed, "value")
    except ValueError:
        raise FormatError(f"{path}: non-numeric record under {header!r}") from None
    raise FormatError(f"{path}: header must be 'x_index' or 'x_value', got {header!r}")
