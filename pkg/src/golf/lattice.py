"""Gridded data with an observation mask, plus strict CSV input/output."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError

__all__ = [
    "LatticeData",
    "format_float",
    "write_matrix",
    "read_matrix",
    "write_coords",
    "read_coords",
]


@dataclass(eq=False)
class LatticeData:
    """An ``n1 x n2`` lattice of values with missing cells.

    Attributes
    ----------
    values : ndarray, shape (n1, n2)
        Observations; unobserved cells hold NaN.
    mask : ndarray of bool, shape (n1, n2)
        True where a cell is observed.
    coords_s : ndarray, shape (n1, p1)
        Row coordinates.
    coords_x : ndarray, shape (n2,)
        Strictly increasing column coordinates.
    kron : tuple of int or None
        ``(d1, d2)`` when the rows form a two-coordinate product grid to be
        handled with Kronecker loadings.
    """

    values: np.ndarray
    mask: np.ndarray
    coords_s: np.ndarray
    coords_x: np.ndarray
    kron: tuple | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise PreconditionError("values must be a matrix")
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != v.shape:
            raise PreconditionError("mask shape differs from values shape")
        if not np.all(np.isfinite(v[m])):
            raise DataError("observed cells must be finite")
        v[~m] = np.nan
        s = np.asarray(self.coords_s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        x = np.asarray(self.coords_x, dtype=float).ravel()
        if s.shape[0] != v.shape[0]:
            raise PreconditionError(f"{s.shape[0]} row coordinates for {v.shape[0]} rows")
        if x.size != v.shape[1]:
            raise PreconditionError(f"{x.size} column coordinates for {v.shape[1]} columns")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(x))):
            raise DataError("coordinates must be finite")
        if np.any(np.diff(x) <= 0):
            raise DataError("column coordinates must be strictly increasing")
        self.values, self.mask, self.coords_s, self.coords_x = v, m, s, x
        if self.kron is not None:
            self.kron = tuple(int(k) for k in self.kron)
            self.kron_axes()

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def n_missing(self) -> int:
        return int(self.mask.size - self.mask.sum())

    def kron_axes(self):
        """Split product-grid row coordinates into their two axes.

        Rows must be ordered with the second coordinate varying fastest.
        """
        s = self.coords_s
        if s.shape[1] != 2:
            raise DataError("Kronecker loadings need two row coordinates")
        first = np.unique(s[:, 0])
        m1 = first.size
        if s.shape[0] % m1:
            raise DataError("row coordinates do not form a product grid")
        m2 = s.shape[0] // m1
        a1 = s[::m2, 0]
        a2 = s[:m2, 1]
        expect = np.column_stack([np.repeat(a1, m2), np.tile(a2, m1)])
        if not np.array_equal(expect, s):
            raise DataError("row coordinates do not form a product grid in row-major order")
        return a1, a2

    def row_means(self) -> np.ndarray:
        """Mean of observed cells per row; the global mean for empty rows."""
        counts = self.mask.sum(axis=1)
        total = np.where(self.mask, self.values, 0.0).sum(axis=1)
        glob = total.sum() / max(counts.sum(), 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = total / counts
        return np.where(counts > 0, means, glob)


# ---------------------------------------------------------------------------
# CSV


def format_float(v: float) -> str:
    """Shortest-safe text for a double: 17 significant digits."""
    return format(float(v), ".17g")


def write_matrix(path, A, mask=None):
    """Write a matrix as CSV; cells with ``mask == False`` become empty fields."""
    A = np.asarray(A)
    buf = io.StringIO()
    for i in range(A.shape[0]):
        if mask is None:
            row = [format_float(v) for v in A[i]]
        else:
            row = [format_float(v) if ok else "" for v, ok in zip(A[i], mask[i])]
        buf.write(",".join(row))
        buf.write("\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _parse_field(text, path, r, c):
    text = text.strip()
    if text == "":
        return np.nan, False
    try:
        # float() is locale independent; it also takes digit separators, which we refuse
        if "_" in text:
            raise ValueError
        val = float(text)
    except ValueError:
        raise DataError(f"{path}: row {r + 1}, column {c + 1}: not a number: {text!r}") from None
    if not np.isfinite(val):
        raise DataError(f"{path}: row {r + 1}, column {c + 1}: non-finite value {text!r}")
    return val, True


def read_matrix(path, allow_missing=True):
    """Read a numeric CSV matrix.

    Returns
    -------
    values : ndarray
        NaN at empty fields.
    mask : ndarray of bool
        True where a field held a number.
    """
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    width = next((len(rec) for rec in rows if rec), 0)
    if width == 0:
        raise DataError(f"{path}: empty file")
    # csv yields [] for a blank line: a missing cell in a one-column file, noise otherwise
    rows = [rec or [""] for rec in rows] if width == 1 else [rec for rec in rows if rec]
    values = np.empty((len(rows), width))
    mask = np.empty((len(rows), width), dtype=bool)
    for r, rec in enumerate(rows):
        if len(rec) != width:
            raise DataError(f"{path}: row {r + 1} has {len(rec)} fields, expected {width}")
        for c, text in enumerate(rec):
            values[r, c], mask[r, c] = _parse_field(text, path, r, c)
            if not mask[r, c] and not allow_missing:
                raise DataError(f"{path}: row {r + 1}, column {c + 1}: empty field")
    return values, mask


def write_coords(path, coords, kron=None):
    """Write coordinates, one row per point; optional ``kron=d1,d2`` header."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    with open(path, "w", newline="") as fh:
        if kron is not None:
            fh.write(f"# kron={int(kron[0])},{int(kron[1])}\n")
        for row in coords:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_coords(path):
    """Read a coordinate file; returns ``(coords, kron)``."""
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    kron = None
    lines = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            stripped = line.strip()
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if body.startswith("kron="):
                    try:
                        d1, d2 = (int(t) for t in body[5:].split(","))
                    except ValueError:
                        raise DataError(f"{path}: line {lineno + 1}: bad kron flag {body!r}") from None
                    if d1 < 1 or d2 < 1:
                        raise DataError(f"{path}: kron dimensions must be positive")
                    kron = (d1, d2)
                continue
            if stripped:
                lines.append(stripped)
    values, _ = _read_matrix_lines(lines, path)
    return values, kron


def _read_matrix_lines(lines, path):
    rows = list(csv.reader(lines))
    width = len(rows[0]) if rows else 0
    if width == 0:
        raise DataError(f"{path}: no coordinates")
    out = np.empty((len(rows), width))
    for r, rec in enumerate(rows):
        if len(rec) != width:
            raise DataError(f"{path}: row {r + 1} has {len(rec)} fields, expected {width}")
        for c, text in enumerate(rec):
            val, ok = _parse_field(text, path, r, c)
            if not ok:
                raise DataError(f"{path}: row {r + 1}, column {c + 1}: empty field")
            out[r, c] = val
    return out, np.ones_like(out, dtype=bool)
