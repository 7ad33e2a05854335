"""CSV / JSON persistence.

Every CSV has a header row. Floats are written with ``repr`` so they round-trip
exactly and reruns produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, GroupStructure, InvalidGroupsError, ShapeError


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_matrix(path: Path, M: np.ndarray, prefix: str, index_name: str | None = None) -> Path:
    M = np.atleast_2d(np.asarray(M))
    header = [f"{prefix}_{j + 1}" for j in range(M.shape[1])]
    if index_name is None:
        return write_csv(path, header, M.tolist())
    return write_csv(path, [index_name] + header, ([i + 1] + list(r) for i, r in enumerate(M.tolist())))


def read_matrix(path: Path, index_column: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ShapeError(f"{path}: expected a header row and at least one data row")
    try:
        M = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ShapeError(f"{path}: non-numeric entry ({exc})") from exc
    if M.ndim != 2:
        raise ShapeError(f"{path}: ragged rows")
    return M[:, 1:] if index_column else M


def write_groups(path: Path, groups: GroupStructure) -> Path:
    return write_csv(path, ["snp_index", "group_id"],
                     ((i + 1, int(k) + 1) for i, k in enumerate(groups.group_of)))


def read_groups(path: Path, num_snps: int | None = None) -> GroupStructure:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"snp_index", "group_id"} <= set(reader.fieldnames):
            raise InvalidGroupsError(f"{path}: expected columns snp_index, group_id")
        pairs = []
        for r in reader:
            try:
                pairs.append((int(r["snp_index"]), r["group_id"].strip()))
            except ValueError as exc:
                raise InvalidGroupsError(f"{path}: bad snp_index {r['snp_index']!r}") from exc
    members: dict[str, list[int]] = {}
    for i, g in pairs:
        if i < 1:
            raise InvalidGroupsError(f"{path}: snp_index values are 1-based")
        members.setdefault(g, []).append(i - 1)
    return GroupStructure.from_groups(list(members.values()), num_snps=num_snps)


def write_dataset(out: Path, data: Dataset, groups: GroupStructure) -> dict[str, Path]:
    out = Path(out)
    return {
        "X": write_matrix(out / "X.csv", data.X, "snp"),
        "Y": write_matrix(out / "Y.csv", data.Y, "pheno"),
        "groups": write_groups(out / "groups.csv", groups),
    }


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(json.loads(json.dumps(obj, default=_json_default))), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path
