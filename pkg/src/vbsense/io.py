"""CSV and text artifacts.

Every CSV starts with ``#`` comment lines (config echo, seed), followed by a
column header and rows. Floats are written with ``repr`` so values round-trip
exactly and repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

from .measurement import CountRecord
from .protocols import OdmrSpectrum, TimeTrace

TRACE_COLUMNS = ("tau_s", "signal", "sigma")
SPECTRUM_COLUMNS = ("freq_hz", "contrast", "sigma")
COUNT_COLUMNS = ("signal_counts", "reference_counts", "duration_s", "seed")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def format_csv(columns, rows, comments=()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, comments=()) -> None:
    atomic_write_text(path, format_csv(columns, rows, comments))


def read_csv(path) -> tuple[list[str], list[list[str]], list[str]]:
    """Return (columns, rows, comment lines)."""
    comments, body = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                body.append(line)
    if not body:
        raise ValueError(f"{path}: no CSV header")
    rows = list(csv.reader(body))
    return [c.strip() for c in rows[0]], rows[1:], comments


def _numeric(path, expected_first):
    cols, rows, _ = read_csv(path)
    if cols[0] not in expected_first:
        raise ValueError(f"{path}: unexpected columns {cols}")
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return cols, data


def write_trace(path, trace: TimeTrace, comments=(), abscissa_name="tau_s") -> None:
    rows = zip(trace.abscissa, trace.signal, trace.sigma)
    write_csv(path, (abscissa_name,) + TRACE_COLUMNS[1:], rows, comments)


def read_trace(path) -> TimeTrace:
    cols, data = _numeric(path, ("tau_s", "duration_s", "freq_hz"))
    sigma = data[:, 2] if len(cols) > 2 else None
    return TimeTrace(data[:, 0], data[:, 1], sigma, {"source": os.fspath(path), "abscissa": cols[0]})


def write_spectrum(path, spec: OdmrSpectrum, comments=()) -> None:
    write_csv(path, SPECTRUM_COLUMNS, zip(spec.frequency, spec.contrast, spec.sigma), comments)


def read_spectrum(path) -> OdmrSpectrum:
    cols, data = _numeric(path, ("freq_hz",))
    sigma = data[:, 2] if len(cols) > 2 else None
    return OdmrSpectrum(data[:, 0], data[:, 1], sigma)


def write_counts(path, records, comments=()) -> None:
    rows = [(r.signal_counts, r.reference_counts, r.duration, r.seed) for r in records]
    write_csv(path, COUNT_COLUMNS, rows, comments)


def read_counts(path) -> list[CountRecord]:
    cols, rows, _ = read_csv(path)
    if tuple(cols) != COUNT_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {cols}")
    return [CountRecord(int(a), int(b), float(c), int(d)) for a, b, c, d in rows]
