"""Deterministic CSV writing shared by the experiment drivers.

Floats are printed with 17 significant digits (exact round trip for IEEE
doubles), so identical computations produce byte-identical files. Every file
starts with one '#' comment line recording provenance, then a header row.
"""

from __future__ import annotations

import numbers

import numpy as np


def format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (numbers.Real, np.floating)):
        return format(float(value), ".17g")
    raise TypeError(f"cannot format {type(value)!r} into a CSV cell")


def write_csv(path, comment: str, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")
