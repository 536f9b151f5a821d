"""File formats: stream CSVs, descriptor JSON documents and dataset manifests.

All writers go through a temporary file in the target directory followed by
an atomic rename, so readers never observe partial outputs.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .errors import FormatError, HistogramError, InputError
from .kernel import RENORMALIZE_TOL, Kernel, as_stream
from .klds import KldsDescriptor

DESCRIPTOR_VERSION = 1
_FIELDS = ("version", "n", "p", "N", "kernel", "A", "alpha", "beta", "Y")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return "%.17g" % x


def _cell(v) -> str:
    # Shortest repr that round-trips, for tables meant to be read by people too.
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# -- streams -----------------------------------------------------------------

def write_stream(Y, path) -> None:
    """Write a ``p x N`` stream as CSV: header ``bin_0..bin_{p-1}``, one row per time step."""
    Y = as_stream(Y, renormalize=False)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"bin_{i}" for i in range(Y.shape[0])])
    for t in range(Y.shape[1]):
        w.writerow([_fmt(v) for v in Y[:, t]])
    atomic_write_text(path, buf.getvalue())


def read_stream(path) -> np.ndarray:
    """Parse a stream CSV into a ``p x N`` array.

    Rows whose mass is within ``RENORMALIZE_TOL`` of one are renormalized.
    Parse and validity errors name the file, the 1-based line and the bin.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read stream: {exc.strerror}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header)
    if header != [f"bin_{i}" for i in range(p)]:
        raise FormatError(f"{path}: line 1: header must be bin_0,...,bin_{p - 1}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p:
            raise FormatError(f"{path}: line {lineno}: expected {p} columns, got {len(row)}")
        vals = []
        for col, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}, column {col} (bin_{col}): "
                                  f"not a number: {cell!r}") from None
            if not np.isfinite(v) or v < 0:
                raise HistogramError(f"{path}: line {lineno}, column {col} (bin_{col}): "
                                     f"invalid bin value {cell!r}")
            vals.append(v)
        mass = sum(vals)
        if abs(mass - 1.0) > RENORMALIZE_TOL:
            raise HistogramError(f"{path}: line {lineno}: row sums to {mass!r}, expected 1 "
                                 f"(tolerance {RENORMALIZE_TOL:g})")
        data.append(vals)
    if not data:
        raise FormatError(f"{path}: no data rows")
    return as_stream(np.array(data).T)


# -- descriptors ---------------------------------------------------------------

def descriptor_to_dict(theta: KldsDescriptor) -> dict:
    return {
        "version": DESCRIPTOR_VERSION,
        "n": theta.n,
        "p": theta.p,
        "N": theta.N,
        "kernel": theta.kernel.value,
        "A": theta.A.tolist(),
        "alpha": theta.alpha.tolist(),
        "beta": theta.beta.tolist(),
        "Y": theta.Y.tolist(),
    }


def _matrix(doc, name, shape, where) -> np.ndarray:
    try:
        a = np.array(doc[name], dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: field {name!r} is not a numeric array") from None
    if a.shape != shape:
        expected = " x ".join(str(s) for s in shape)
        got = " x ".join(str(s) for s in a.shape) or "scalar"
        raise FormatError(f"{where}: field {name!r} has shape {got}, expected {expected}")
    if not np.all(np.isfinite(a)):
        raise FormatError(f"{where}: field {name!r} has non-finite entries")
    return a


def descriptor_from_dict(doc, where: str = "descriptor") -> KldsDescriptor:
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected a JSON object")
    for name in _FIELDS:
        if name not in doc:
            raise FormatError(f"{where}: missing field {name!r}")
    if doc["version"] != DESCRIPTOR_VERSION:
        raise FormatError(f"{where}: unsupported version {doc['version']!r}, "
                          f"expected {DESCRIPTOR_VERSION}")
    try:
        kernel = Kernel(doc["kernel"])
    except ValueError:
        raise FormatError(f"{where}: unknown kernel {doc['kernel']!r}") from None
    dims = {}
    for name in ("n", "p", "N"):
        v = doc[name]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise FormatError(f"{where}: field {name!r} must be a positive integer")
        dims[name] = v
    n, p, N = dims["n"], dims["p"], dims["N"]
    A = _matrix(doc, "A", (n, n), where)
    alpha = _matrix(doc, "alpha", (N, n), where)
    beta = _matrix(doc, "beta", (N,), where)
    Y = _matrix(doc, "Y", (p, N), where)
    return KldsDescriptor(A=A, Y=Y, alpha=alpha, beta=beta, kernel=kernel)


def write_descriptor(theta: KldsDescriptor, path) -> None:
    # json uses repr for floats, which round-trips doubles exactly.
    atomic_write_text(path, json.dumps(descriptor_to_dict(theta)) + "\n")


def read_descriptor(path) -> KldsDescriptor:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"{path}: cannot read descriptor: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return descriptor_from_dict(doc, str(path))


# -- manifests -----------------------------------------------------------------

def read_manifest(path) -> list[tuple[Path, str]]:
    """Entries ``(path, label)`` of a manifest; relative paths are resolved against it.

    Every referenced file must exist; otherwise this fails before anything
    is loaded.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"{path}: cannot read manifest: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, list) or not doc:
        raise FormatError(f"{path}: manifest must be a nonempty JSON list")
    out = []
    missing = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "path" not in item or "label" not in item:
            raise FormatError(f"{path}: entry {i} must be an object with 'path' and 'label'")
        p = Path(item["path"])
        if not p.is_absolute():
            p = path.parent / p
        if not p.is_file():
            missing.append(str(p))
        out.append((p, str(item["label"])))
    if missing:
        raise InputError(f"{path}: missing files: {', '.join(missing)}")
    return out


def write_manifest(entries: Iterable[tuple[str, str]], path) -> None:
    doc = [{"path": str(p), "label": lab} for p, lab in entries]
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


# -- matrices and tables -------------------------------------------------------

def write_matrix_csv(M, path, header: Sequence[str] | None = None,
                     row_labels: Sequence[str] | None = None, corner: str = "") -> None:
    M = np.atleast_2d(np.asarray(M))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(([corner] if row_labels is not None else []) + list(header))
    for i, row in enumerate(M):
        cells = [_cell(v) for v in row.tolist()]
        w.writerow(([row_labels[i]] if row_labels is not None else []) + cells)
    atomic_write_text(path, buf.getvalue())


def write_rows_csv(header: Sequence[str], rows: Iterable[Sequence], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    atomic_write_text(path, buf.getvalue())
