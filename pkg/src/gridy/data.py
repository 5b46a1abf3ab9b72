"""Multi-subject, two-group time-series blocks and their on-disk format.

A dataset is a JSON manifest::

    [{"subject": "s01", "group": 1, "path": "s01.csv"}, ...]

where each CSV holds a header row of variable names followed by ``T_k``
numeric rows (time) of ``d`` columns. Relative paths resolve against the
manifest's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

GROUPS = (1, 2)


@dataclass(frozen=True)
class TimeSeriesBlock:
    subject_id: str
    values: np.ndarray
    group: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"subject {self.subject_id}: block must be 2-D, got {values.ndim}-D")
        if values.shape[0] < 2:
            raise DataError(f"subject {self.subject_id}: need at least 2 time points")
        if not np.all(np.isfinite(values)):
            row, col = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"subject {self.subject_id}: non-finite value at row {row}, column {col}")
        if self.group not in GROUPS:
            raise DataError(f"subject {self.subject_id}: group label {self.group!r} not in {{1,2}}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class MultiBlockDataset:
    blocks: tuple
    variable_names: tuple = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise DataError("dataset has no subjects")
        d = blocks[0].d
        for b in blocks:
            if b.d != d:
                raise DataError(
                    f"column-count mismatch: subject {blocks[0].subject_id} has {d} columns, "
                    f"subject {b.subject_id} has {b.d}"
                )
        ids = [b.subject_id for b in blocks]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject ids in dataset")
        for g in GROUPS:
            if not any(b.group == g for b in blocks):
                raise DataError(f"group {g} is empty")
        names = tuple(self.variable_names) or tuple(f"V{i + 1}" for i in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} variable names for {d} columns")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "variable_names", names)

    @property
    def d(self):
        return self.blocks[0].d

    @property
    def group_sizes(self):
        return tuple(sum(b.group == g for b in self.blocks) for g in GROUPS)

    @property
    def subjects(self):
        return [b.subject_id for b in self.blocks]

    @property
    def groups(self):
        return np.array([b.group for b in self.blocks])

    @property
    def matrices(self):
        return [b.values for b in self.blocks]

    def __len__(self):
        return len(self.blocks)

    def select(self, subject_ids):
        """Sub-dataset with the given subjects, original order kept."""
        keep = set(subject_ids)
        return MultiBlockDataset(tuple(b for b in self.blocks if b.subject_id in keep), self.variable_names)

    def centered(self):
        return MultiBlockDataset(
            tuple(TimeSeriesBlock(b.subject_id, center_columns(b.values), b.group) for b in self.blocks),
            self.variable_names,
        )


@dataclass
class GroundTruth:
    """Parameters and latent series of a simulated dataset (subject order = dataset order)."""

    B_joint: np.ndarray
    B_group1: np.ndarray
    B_group2: np.ndarray
    F_joint: list
    F_group: list
    Psi_joint: np.ndarray
    Psi_group: np.ndarray
    C_joint: list
    C_group: list
    Phi_joint: np.ndarray
    Phi_group: np.ndarray
    noise_var: float
    groups: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def B_group(self, g):
        return self.B_group1 if g == 1 else self.B_group2

    def joint_signal(self, k):
        return self.F_joint[k] @ self.B_joint.T

    def group_signal(self, k):
        return self.F_group[k] @ self.B_group(int(self.groups[k])).T

    def factor_transition(self, k, structure):
        """Transition of the (scaled) factor series ``F = A C``: ``C Psi C^-1``."""
        if structure == "joint":
            c, psi = self.C_joint[k], self.Psi_joint
        else:
            c, psi = self.C_group[k], self.Psi_group
        return c @ psi @ np.linalg.inv(c)


def center_columns(x):
    x = np.asarray(x, dtype=float)
    out = x - x.mean(axis=0)
    # a second pass removes the rounding residue of the first
    return out - out.mean(axis=0)


def read_block_csv(path):
    """Return ``(header, values)`` from a block CSV, with cell-level errors."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read block file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell {cell!r} at row {i}, column {j} ({header[j]})") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r} at row {i}, column {j} ({header[j]})")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def write_matrix_csv(path, matrix, header=None, row_labels=None):
    """Write a matrix with full float precision (``%.17g``)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(([""] if row_labels is not None else []) + list(header))
        for i, row in enumerate(matrix):
            cells = ["%.17g" % v for v in row]
            w.writerow(([row_labels[i]] if row_labels is not None else []) + cells)


def read_matrix_csv(path, header=True, row_labels=False):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = None
    if header:
        names, rows = rows[0], rows[1:]
        if row_labels:
            names = names[1:]
    labels = None
    if row_labels:
        labels = [r[0] for r in rows]
        rows = [r[1:] for r in rows]
    m = np.array([[float(c) for c in r] for r in rows if r], dtype=float)
    if m.size == 0:
        m = m.reshape(0, len(names) if names else 0)
    return m, names, labels


def load_dataset(manifest_path, center=True):
    """Read and validate a manifest plus its block CSVs."""
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise DataError("manifest must be a non-empty JSON array")
    base = manifest_path.parent
    blocks = []
    names = None
    for n, entry in enumerate(entries):
        try:
            sid, group, rel = str(entry["subject"]), entry["group"], entry["path"]
        except (KeyError, TypeError):
            raise DataError(f"manifest entry {n} needs 'subject', 'group', 'path'") from None
        if group not in GROUPS or isinstance(group, bool):
            raise DataError(f"manifest entry {n} ({sid}): group label {group!r} not in {{1,2}}")
        path = Path(rel)
        if not path.is_absolute():
            path = base / path
        header, values = read_block_csv(path)
        if names is None:
            names = header
        elif len(header) != len(names):
            raise DataError(
                f"column-count mismatch: subject {sid} has {len(header)} columns, expected {len(names)}"
            )
        if center:
            values = center_columns(values)
        blocks.append(TimeSeriesBlock(sid, values, int(group)))
    return MultiBlockDataset(tuple(blocks), tuple(names))


def write_dataset(dataset, directory, manifest_name="manifest.json"):
    """Write blocks as ``<subject>.csv`` plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for b in dataset.blocks:
        fname = f"{b.subject_id}.csv"
        write_matrix_csv(directory / fname, b.values, header=dataset.variable_names)
        entries.append({"subject": b.subject_id, "group": b.group, "path": fname})
    manifest = directory / manifest_name
    manifest.write_text(json.dumps(entries, indent=2) + "\n")
    return manifest
