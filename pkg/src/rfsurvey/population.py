"""Finite populations: the frame of units, predictors and study variables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    """Raised for malformed population files or inconsistent columns."""


@dataclass(frozen=True, eq=False)
class PopulationFrame:
    """A finite population of N units.

    ``predictors`` is the N x p matrix the working models see;
    ``study_vars`` maps variable names to length-N vectors; ``unit_ids``
    are opaque labels carried through to reports.
    """

    predictors: np.ndarray
    predictor_names: tuple[str, ...]
    study_vars: dict[str, np.ndarray]
    unit_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        x = np.asarray(self.predictors, dtype=np.float64)
        if x.ndim != 2:
            raise DataError("predictors must be a 2-d matrix")
        n, p = x.shape
        if n < 1 or p < 1:
            raise DataError("population needs N >= 1 units and p >= 1 predictors")
        if not np.isfinite(x).all():
            raise DataError("predictor values must be finite")
        if len(self.predictor_names) != p:
            raise DataError("predictor_names length does not match matrix width")
        object.__setattr__(self, "predictors", x)
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        sv = {}
        for name, col in self.study_vars.items():
            v = np.asarray(col, dtype=np.float64)
            if v.shape != (n,):
                raise DataError(f"study variable {name!r} has length {v.shape}, expected {n}")
            sv[name] = v
        object.__setattr__(self, "study_vars", sv)
        ids = self.unit_ids
        if ids is None:
            ids = np.arange(1, n + 1)
        ids = np.asarray(ids)
        if ids.shape != (n,):
            raise DataError("unit_ids length does not match N")
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n_units(self) -> int:
        return self.predictors.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.predictors.shape[1]

    def study(self, name: str) -> np.ndarray:
        try:
            return self.study_vars[name]
        except KeyError:
            raise DataError(f"unknown study variable {name!r}") from None

    def select_predictors(self, names) -> np.ndarray:
        """Column submatrix by predictor names (order preserved)."""
        lookup = {n: i for i, n in enumerate(self.predictor_names)}
        try:
            cols = [lookup[n] for n in names]
        except KeyError as exc:
            raise DataError(f"unknown predictor column {exc.args[0]!r}") from None
        return self.predictors[:, cols]


def read_population(
    path,
    *,
    predictors: list[str] | None = None,
    study: list[str] | None = None,
    delimiter: str = ",",
    id_column: str | None = None,
    strata_column: str | None = None,
):
    """Load a population from a delimited text file with a header row.

    Columns not claimed as study variables, id or strata become
    predictors unless an explicit ``predictors`` list is given.  Returns
    ``(PopulationFrame, strata_labels_or_None)``.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read population file: {exc}") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    if not rows:
        raise DataError(f"{path}: no data rows")
    ncol = len(header)
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {ncol}")

    columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}
    study = list(study or [])
    claimed = set(study) | {c for c in (id_column, strata_column) if c}
    for name in claimed:
        if name not in columns:
            raise DataError(f"{path}: column {name!r} not in header")
    if predictors is None:
        predictors = [h for h in header if h not in claimed]
    if not predictors:
        raise DataError(f"{path}: no predictor columns left")

    def numeric(name):
        try:
            return np.array([float(v) for v in columns[name]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: column {name!r}: {exc}") from None

    x = np.column_stack([numeric(name) for name in predictors])
    study_vars = {name: numeric(name) for name in study}
    ids = np.asarray(columns[id_column]) if id_column else None
    frame = PopulationFrame(x, tuple(predictors), study_vars, unit_ids=ids)
    strata = np.asarray(columns[strata_column]) if strata_column else None
    return frame, strata
