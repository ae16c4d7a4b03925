"""File formats: Matrix Market, CSV matrices, JSON bundles, digests.

Floats are always rendered with ``repr`` (shortest round-trip decimal), so
every writer/reader pair here is lossless at double precision.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ParseError

__all__ = [
    "fmt",
    "write_mtx",
    "read_mtx",
    "write_csv_matrix",
    "read_csv_matrix",
    "write_coo3",
    "read_coo3",
    "write_json",
    "read_json",
    "file_digest",
    "convert",
]


def fmt(x: float) -> str:
    return repr(float(x))


# Matrix Market ===============================================================
_MM_BANNER = "%%MatrixMarket"


def write_mtx(path, M, *, coordinate: bool = False, comment: str | None = None) -> Path:
    """Write a real matrix (or vector, stored as a column) in Matrix Market format."""
    path = Path(path)
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ValueError("expected a one- or two-dimensional array")
    rows, cols = A.shape
    lines = []
    if coordinate:
        lines.append(f"{_MM_BANNER} matrix coordinate real general")
        if comment:
            lines.append(f"% {comment}")
        ii, jj = np.nonzero(A)
        lines.append(f"{rows} {cols} {len(ii)}")
        # column-major order, as the format customarily lists entries
        order = np.lexsort((ii, jj))
        for k in order:
            lines.append(f"{ii[k] + 1} {jj[k] + 1} {fmt(A[ii[k], jj[k]])}")
    else:
        lines.append(f"{_MM_BANNER} matrix array real general")
        if comment:
            lines.append(f"% {comment}")
        lines.append(f"{rows} {cols}")
        lines.extend(fmt(v) for v in A.ravel(order="F"))
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_float(tok: str, line: int, col: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"invalid number {tok!r}", line, col) from None


def _parse_int(tok: str, line: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"invalid integer {tok!r}", line, col) from None


def read_mtx(path) -> np.ndarray:
    """Read a real Matrix Market file (array or coordinate) into a dense array."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError("empty Matrix Market file", 1, 1)
    header = text[0].split()
    if len(header) != 5 or header[0] != _MM_BANNER or header[1].lower() != "matrix":
        raise ParseError("malformed Matrix Market header", 1, 1)
    layout, field, symmetry = (h.lower() for h in header[2:])
    if layout not in ("array", "coordinate"):
        raise ParseError(f"unsupported layout {layout!r}", 1, len(" ".join(header[:2])) + 2)
    if field not in ("real", "double", "integer"):
        raise ParseError(f"unsupported field {field!r}", 1, len(" ".join(header[:3])) + 2)
    if symmetry not in ("general", "symmetric"):
        raise ParseError(f"unsupported symmetry {symmetry!r}", 1, len(" ".join(header[:4])) + 2)

    body = [(k + 1, ln) for k, ln in enumerate(text) if k > 0 and ln.strip() and not ln.startswith("%")]
    if not body:
        raise ParseError("missing size line", len(text) + 1, 1)
    size_line, size = body[0]
    toks = size.split()
    if layout == "array":
        if len(toks) != 2:
            raise ParseError("array size line needs 2 integers", size_line, 1)
        rows, cols = (_parse_int(t, size_line, 1) for t in toks)
        vals = [_parse_float(ln.strip(), k, 1) for k, ln in body[1:]]
        expected = rows * cols if symmetry == "general" else rows * (rows + 1) // 2
        if len(vals) != expected:
            raise ParseError(f"expected {expected} values, found {len(vals)}", body[-1][0], 1)
        if symmetry == "general":
            return np.array(vals, dtype=float).reshape((rows, cols), order="F")
        A = np.zeros((rows, cols))
        it = iter(vals)
        for j in range(cols):
            for i in range(j, rows):
                A[i, j] = A[j, i] = next(it)
        return A

    if len(toks) != 3:
        raise ParseError("coordinate size line needs 3 integers", size_line, 1)
    rows, cols, nnz = (_parse_int(t, size_line, 1) for t in toks)
    A = np.zeros((rows, cols))
    entries = body[1:]
    if len(entries) != nnz:
        raise ParseError(f"expected {nnz} entries, found {len(entries)}", entries[-1][0] if entries else size_line, 1)
    for k, ln in entries:
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError("coordinate entry needs 3 fields", k, 1)
        i = _parse_int(parts[0], k, 1)
        j = _parse_int(parts[1], k, len(parts[0]) + 2)
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise ParseError(f"index ({i}, {j}) out of range", k, 1)
        v = _parse_float(parts[2], k, len(parts[0]) + len(parts[1]) + 3)
        A[i - 1, j - 1] += v
        if symmetry == "symmetric" and i != j:
            A[j - 1, i - 1] += v
    return A


# CSV =========================================================================
def write_csv_matrix(path, M, header: list[str] | None = None) -> Path:
    path = Path(path)
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if header is not None:
            w.writerow(header)
        for row in A:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv_matrix(path, *, header: bool | None = None) -> tuple[np.ndarray, list[str] | None]:
    """Read a numeric CSV.  ``header=None`` auto-detects a non-numeric first row."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty CSV file", 1, 1)
    names = None
    start = 0
    if header or header is None:
        try:
            [float(t) for t in rows[0]]
            if header:
                names, start = rows[0], 1
        except ValueError:
            names, start = rows[0], 1
    data = []
    width = None
    for k, row in enumerate(rows[start:], start=start + 1):
        if not row:
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", k, 1)
        vals = []
        col = 1
        for tok in row:
            vals.append(_parse_float(tok, k, col))
            col += len(tok) + 1
        data.append(vals)
    A = np.array(data, dtype=float) if data else np.zeros((0, len(names or [])))
    return A, names


# Sparse order-3 tensors ======================================================
def write_coo3(path, idx: np.ndarray, vals: np.ndarray, shape: tuple[int, int, int]) -> Path:
    """Three index columns (1-based) followed by the value."""
    path = Path(path)
    lines = [f"% order-3 coordinate tensor {shape[0]} {shape[1]} {shape[2]} {len(vals)}"]
    for (i, j, l), v in zip(np.asarray(idx), np.asarray(vals)):
        lines.append(f"{i + 1} {j + 1} {l + 1} {fmt(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_coo3(path) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("% order-3 coordinate tensor"):
        raise ParseError("malformed tensor header", 1, 1)
    head = text[0].split()[-4:]
    n1, n2, n3, nnz = (_parse_int(t, 1, 1) for t in head)
    idx, vals = [], []
    for k, ln in enumerate(text[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 4:
            raise ParseError("tensor entry needs 4 fields", k, 1)
        idx.append([_parse_int(t, k, 1) - 1 for t in parts[:3]])
        vals.append(_parse_float(parts[3], k, 1))
    if len(vals) != nnz:
        raise ParseError(f"expected {nnz} entries, found {len(vals)}", len(text), 1)
    return (np.array(idx, dtype=np.int64).reshape(-1, 3), np.array(vals, dtype=float), (n1, n2, n3))


# JSON ========================================================================
def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# Conversion ==================================================================
FORMATS = ("matrix-market", "csv", "json-bundle")


def _load_any(path: Path, fmt_in: str) -> dict:
    """Return ``{"manifest": dict | None, "matrices": {name: array}}``."""
    if fmt_in == "matrix-market":
        if path.is_dir():
            man_path = path / "manifest.json"
            manifest = read_json(man_path) if man_path.exists() else {}
            mats = {p.stem: read_mtx(p) for p in sorted(path.glob("*.mtx"))}
            return {"manifest": manifest, "matrices": mats}
        return {"manifest": None, "matrices": {path.stem: read_mtx(path)}}
    if fmt_in == "csv":
        A, _ = read_csv_matrix(path, header=False)
        return {"manifest": None, "matrices": {path.stem: A}}
    data = read_json(path)
    if not isinstance(data, dict) or "matrices" not in data:
        raise ParseError("json-bundle needs a top-level 'matrices' object", 1, 1)
    mats = {}
    for name, rows in data["matrices"].items():
        try:
            mats[name] = np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, 0))
        except (TypeError, ValueError):
            raise ParseError(f"matrix {name!r} is not a rectangular numeric array", 1, 1) from None
    return {"manifest": data.get("manifest"), "matrices": mats}


def convert(path_in, format_in: str, path_out, format_out: str) -> Path:
    """Convert between Matrix Market files/bundles, CSV matrices and JSON bundles."""
    for f in (format_in, format_out):
        if f not in FORMATS:
            raise ValueError(f"unknown format {f!r}; expected one of {FORMATS}")
    path_in, path_out = Path(path_in), Path(path_out)
    loaded = _load_any(path_in, format_in)
    mats = loaded["matrices"]
    if format_out == "json-bundle":
        write_json(path_out, {"manifest": loaded["manifest"], "matrices": {k: v for k, v in mats.items()}})
        return path_out
    if format_out == "csv":
        if len(mats) != 1:
            raise ValueError("csv output holds exactly one matrix; input has %d" % len(mats))
        (A,) = mats.values()
        return write_csv_matrix(path_out, A)
    # matrix-market
    if len(mats) == 1 and loaded["manifest"] is None:
        (A,) = mats.values()
        return write_mtx(path_out, A)
    os.makedirs(path_out, exist_ok=True)
    for name, A in mats.items():
        write_mtx(path_out / f"{name}.mtx", A)
    if loaded["manifest"] is not None:
        write_json(path_out / "manifest.json", loaded["manifest"])
    return path_out
