"""Plain-text CSV snapshots of grid samples and nodal fields.

Header: ``node_index, x1..xn, f1..fm`` followed by any extra field columns.
Rows follow the lexicographic node order of the grid. Floats are written
with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

import csv
from typing import Mapping, TextIO

import numpy as np

from .errors import DataError
from .grid import GraphSample, GridDomain


def _flatten_field(name: str, arr: np.ndarray, num: int) -> dict[str, np.ndarray]:
    arr = np.asarray(arr, dtype=float).reshape(num, -1)
    if arr.shape[1] == 1:
        return {name: arr[:, 0]}
    return {f"{name}{k + 1}": arr[:, k] for k in range(arr.shape[1])}


def write_sample_csv(sample: GraphSample, stream: TextIO,
                     fields: Mapping[str, np.ndarray] | None = None) -> None:
    dom = sample.domain
    num = dom.num_nodes
    x = dom.coordinates().reshape(num, dom.n)
    f = sample.values.reshape(num, sample.m)
    columns: dict[str, np.ndarray] = {}
    for i in range(dom.n):
        columns[f"x{i + 1}"] = x[:, i]
    for a in range(sample.m):
        columns[f"f{a + 1}"] = f[:, a]
    for name, arr in (fields or {}).items():
        columns.update(_flatten_field(name, arr, num))
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["node_index", *columns])
    data = np.column_stack(list(columns.values()))
    for idx, row in enumerate(data):
        writer.writerow([idx, *(repr(float(v)) for v in row)])


def read_sample_csv(stream: TextIO, domain: GridDomain) -> tuple[GraphSample, dict[str, np.ndarray]]:
    """Inverse of :func:`write_sample_csv`; extra columns come back flat."""
    reader = csv.reader(stream)
    header = [h.strip() for h in next(reader)]
    rows = np.array([[float(v) for v in row] for row in reader])
    if rows.shape[0] != domain.num_nodes:
        raise DataError(f"expected {domain.num_nodes} rows, found {rows.shape[0]}")
    col = {name: rows[:, k] for k, name in enumerate(header)}
    fcols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    m = len(fcols)
    values = np.column_stack([col[f"f{a + 1}"] for a in range(m)]).reshape(*domain.shape, m)
    skip = {"node_index", *fcols, *(f"x{i + 1}" for i in range(domain.n))}
    extra = {k: v for k, v in col.items() if k not in skip}
    return GraphSample(domain=domain, m=m, values=values), extra
