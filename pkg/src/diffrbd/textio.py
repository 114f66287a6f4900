"""Labeled comma-separated matrix blocks.

The one text format used for matrices everywhere: Jacobian exports, LCP
debug dumps, and the oracle comparisons in the CLI. Floats are printed with
17 significant digits so a write/read round trip is bit-exact for float64.
"""

from __future__ import annotations

import numpy as np


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_block(name: str, matrix) -> str:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [f"# {name} {m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(",".join(format_float(x) for x in row))
    return "\n".join(lines) + "\n"


def write_blocks(blocks: dict) -> str:
    return "".join(write_block(name, m) for name, m in blocks.items())


def read_blocks(text: str) -> dict:
    out = {}
    name = None
    rows_left = 0
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if rows_left:
                raise ValueError(f"line {lineno}: block {name!r} is short")
            parts = line[1:].split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: malformed block header")
            name, r, c = parts[0], int(parts[1]), int(parts[2])
            rows_left, rows = r, []
            if r == 0:
                out[name] = np.zeros((0, c))
                name, rows_left = None, 0
            continue
        if name is None:
            raise ValueError(f"line {lineno}: data outside any block")
        rows.append([float(x) for x in line.split(",")])
        rows_left -= 1
        if rows_left == 0:
            out[name] = np.array(rows)
            name = None
    if rows_left:
        raise ValueError(f"block {name!r} is short")
    return out
