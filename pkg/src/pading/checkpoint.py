"""Plain-text checkpoint container for named parameter matrices.

Layout::

    PADING-CKPT-1
    <count>
    <name> <rows> <cols>
    <row 0 values, space separated, 17 significant digits>
    ...

repeated ``count`` times. Names are dotted paths without whitespace, e.g.
``generator.blocks.0.key.weight``. Values round-trip exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import FormatError

MAGIC = "PADING-CKPT-1"


def dumps(arrays: dict) -> str:
    lines = [MAGIC, str(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or any(c.isspace() for c in name):
            raise FormatError(f"cannot store {name!r} with shape {arr.shape}")
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in arr)
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise FormatError(f"not a checkpoint: expected magic {MAGIC!r}")
    try:
        count = int(lines[1])
        pos, out = 2, {}
        for _ in range(count):
            name, rows, cols = lines[pos].split()
            rows, cols = int(rows), int(cols)
            body = lines[pos + 1: pos + 1 + rows]
            arr = np.array([[float(v) for v in ln.split()] for ln in body], dtype=np.float64)
            out[name] = arr.reshape(rows, cols)
            pos += 1 + rows
    except (IndexError, ValueError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from None
    return out


def save_checkpoint(path, arrays: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(arrays))


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def module_arrays(**modules) -> dict:
    """Flatten several modules into one name -> array mapping, prefixed by keyword."""
    out = {}
    for prefix, module in modules.items():
        if module is None:
            continue
        for name, p in module.named_params(prefix + ".").items():
            out[name] = p.data
    return out
