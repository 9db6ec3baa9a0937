"""CSV / JSON output helpers.

CSV schema: header row, comma separator, '.' decimal point, 17-significant-
digit floats (exact float64 round trip).  Solution paths use the long format
t,x,u,m (or t,x,v,mu for linearized paths); curve tables carry one row per
time slice.  Every experiment run also writes run.json with the fully
resolved configuration and an environment fingerprint.
"""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "solution_rows",
    "environment_fingerprint",
]


def fmt(x) -> str:
    """One value, 17 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def solution_rows(grid, tg, paths: dict[str, np.ndarray]):
    """Long-format rows (t, x, *fields) for time-indexed paths."""
    names = list(paths)
    times = tg.times
    xs = grid.nodes
    for k, t in enumerate(times):
        for i, x in enumerate(xs):
            yield (t, x, *[paths[name][k, i] for name in names])


def environment_fingerprint() -> dict:
    import scipy

    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
