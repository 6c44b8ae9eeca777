"""Small dense-matrix helpers, stochastic-matrix predicates and row metrics.

Matrices are plain 2-D ``numpy`` float arrays. Everything here is a pure
function; inputs are never modified.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import DegenerateVectorError, DimensionError, SingularMatrixError

SIMPLEX_TOL = 1e-9
PIVOT_TOL = 1e-12


def as_matrix(M, *, square: bool = False) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if square and A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def is_row_stochastic(M, tol: float = 1e-9) -> bool:
    """True iff every entry is >= -tol and every row sums to 1 within tol."""
    A = as_matrix(M, square=True)
    return bool(np.all(A >= -tol) and np.all(np.abs(A.sum(axis=1) - 1.0) <= tol))


def is_strictly_diag_dominant(M) -> bool:
    A = as_matrix(M, square=True)
    diag = np.abs(np.diag(A))
    off = np.abs(A).sum(axis=1) - diag
    return bool(np.all(diag > off))


def is_simplex(v, tol: float = SIMPLEX_TOL) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(v.ndim == 1 and np.all(v >= 0) and abs(v.sum() - 1.0) <= tol)


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    Raises SingularMatrixError, carrying the column index, when the best
    available pivot has magnitude below 1e-12.
    """
    A = as_matrix(A, square=True).copy()
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if b.shape != (n,):
        raise DimensionError(f"rhs of shape {b.shape} does not match {n}x{n} system")
    b = b.copy()

    for col in range(n):
        pivot = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[pivot, col]) < PIVOT_TOL:
            raise SingularMatrixError(
                f"matrix is singular to working precision at pivot {col}", pivot_index=col
            )
        if pivot != col:
            A[[col, pivot]] = A[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        factors = A[col + 1 :, col] / A[col, col]
        A[col + 1 :, col:] -= np.outer(factors, A[col, col:])
        b[col + 1 :] -= factors * b[col]

    x = np.empty(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - A[row, row + 1 :] @ x[row + 1 :]) / A[row, row]
    return x


def condition_estimate(A) -> float:
    """1-norm condition number; inf for singular input."""
    A = as_matrix(A, square=True)
    try:
        return float(np.linalg.cond(A, p=1))
    except np.linalg.LinAlgError:
        return float("inf")


def row_tvd(S1, S2) -> tuple[float, float]:
    """Max and mean over rows of the total variation distance ½·L1."""
    A = as_matrix(S1)
    B = as_matrix(S2)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    per_row = 0.5 * np.abs(A - B).sum(axis=1)
    return float(per_row.max()), float(per_row.mean())


def tvd(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum(axis=-1))


def project_to_simplex(v) -> np.ndarray:
    """Clip negative entries to zero and renormalise to unit sum."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("expected a finite 1-D vector")
    clipped = np.clip(v, 0.0, None)
    total = clipped.sum()
    if total <= 0.0:
        raise DegenerateVectorError("vector has no positive entries to normalise")
    return clipped / total


def project_rows_to_simplex(M) -> np.ndarray:
    A = as_matrix(M)
    return np.vstack([project_to_simplex(row) for row in A])


# -- serialisation ---------------------------------------------------------


def matrix_to_json(M) -> dict:
    A = as_matrix(M)
    return {"rows": A.shape[0], "cols": A.shape[1], "entries": A.ravel().tolist()}


def matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, str):
        obj = json.loads(obj)
    rows, cols = int(obj["rows"]), int(obj["cols"])
    entries = np.asarray(obj["entries"], dtype=float)
    if entries.size != rows * cols:
        raise DimensionError(f"{entries.size} entries cannot fill a {rows}x{cols} matrix")
    return as_matrix(entries.reshape(rows, cols))


def matrix_to_csv(M, path: str | Path | None = None) -> str:
    A = as_matrix(M)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in A:
        writer.writerow([repr(float(x)) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def matrix_from_csv(source: str | Path) -> np.ndarray:
    """Read a matrix from a CSV path, or from CSV text if it contains a newline."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    rows = [[float(x) for x in row] for row in csv.reader(io.StringIO(text)) if row]
    if len({len(r) for r in rows}) > 1:
        raise DimensionError("ragged CSV matrix")
    return as_matrix(rows)
