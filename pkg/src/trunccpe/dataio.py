"""Dataset ingestion and result serialization for the CLI harness."""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .statcore import SpatialLocations


class DatasetError(Exception):
    """Base class for ingestion failures."""


class EmptyFile(DatasetError):
    pass


class MissingColumn(DatasetError):
    def __init__(self, name):
        super().__init__(f"required column not found: {name!r}")
        self.name = name


class ParseError(DatasetError):
    def __init__(self, row, column, detail=""):
        msg = f"row {row}, column {column!r}: unparseable or missing value"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Dataset:
    """Planar locations, response vector, and covariate columns."""

    locations: SpatialLocations
    response: np.ndarray
    covariates: np.ndarray  # (n, k)
    covariate_names: list

    def __post_init__(self):
        response = np.asarray(self.response, dtype=float).ravel()
        covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if covariates.shape[0] != response.size or self.locations.n != response.size:
            raise ValueError("column lengths disagree")
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "covariates", covariates)

    @property
    def n(self):
        return self.response.size

    def design_matrix(self):
        """Intercept column followed by the covariates."""
        return np.column_stack([np.ones(self.n), self.covariates])


_REQUIRED = ("x", "y", "response")


def _detect_delimiter(header_line):
    return "\t" if header_line.count("\t") >= header_line.count(",") and "\t" in header_line else ","


def load_dataset(path, column_map=None):
    """Parse a delimited text file with header x, y, response, covariates...

    column_map maps the logical names ('x', 'y', 'response') to the actual
    headers in the file. Any row with a missing or unparseable field is
    rejected with a row-indexed ParseError.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise EmptyFile(f"{path} is empty")
        delim = _detect_delimiter(first)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = [h.strip() for h in next(reader)]
        records = [row for row in reader if any(field.strip() for field in row)]
    if not records:
        raise EmptyFile(f"{path} has a header but no data rows")

    column_map = dict(column_map or {})
    actual = {logical: column_map.get(logical, logical) for logical in _REQUIRED}
    index = {}
    for logical, name in actual.items():
        if name not in header:
            raise MissingColumn(name)
        index[logical] = header.index(name)
    covariate_cols = [
        (j, name) for j, name in enumerate(header) if j not in index.values()
    ]

    def parse(row_idx, row, col_idx, col_name):
        if col_idx >= len(row) or not row[col_idx].strip():
            raise ParseError(row_idx, col_name)
        try:
            return float(row[col_idx])
        except ValueError:
            raise ParseError(row_idx, col_name, row[col_idx].strip()) from None

    coords, response, covariates = [], [], []
    for i, row in enumerate(records, start=1):
        coords.append(
            (parse(i, row, index["x"], actual["x"]), parse(i, row, index["y"], actual["y"]))
        )
        response.append(parse(i, row, index["response"], actual["response"]))
        covariates.append([parse(i, row, j, name) for j, name in covariate_cols])

    return Dataset(
        locations=SpatialLocations(np.array(coords)),
        response=np.array(response),
        covariates=np.array(covariates).reshape(len(records), len(covariate_cols)),
        covariate_names=[name for _, name in covariate_cols],
    )


def save_dataset(dataset, path):
    """Inverse of load_dataset (comma-delimited, 17 significant digits)."""
    header = ["x", "y", "response"] + list(dataset.covariate_names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [
                dataset.locations.coords[i, 0],
                dataset.locations.coords[i, 1],
                dataset.response[i],
            ] + list(dataset.covariates[i])
            writer.writerow([format(v, ".17g") for v in row])


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_table(path, header, rows):
    """Delimited table; numbers serialized with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_results(outdir, tables, manifest):
    """Write result tables plus exactly one deterministic run manifest.

    tables: {basename: (header, rows)}. Returns the list of written paths.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    for name, (header, rows) in tables.items():
        path = os.path.join(outdir, name)
        write_table(path, header, rows)
        written.append(path)
    manifest_path = os.path.join(outdir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=format_value)
        fh.write("\n")
    written.append(manifest_path)
    return written


def read_table(path):
    """Reload a written table as {column: list of strings-or-floats}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        columns = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                try:
                    columns[name].append(float(value))
                except ValueError:
                    columns[name].append(value)
    return columns
