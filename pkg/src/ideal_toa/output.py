"""CSV/JSON artifacts, written atomically and stamped with the manifest hash."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps(obj))


def csv_text(header, rows, manifest_hash: str, flags: dict | None = None) -> str:
    lines = [f"# manifest={manifest_hash}"]
    if flags is not None:
        lines.append("# flags=" + json.dumps(_jsonable(flags), sort_keys=True, separators=(",", ":")))
    lines.append(",".join(header))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, manifest_hash, flags=None) -> Path:
    return atomic_write(path, csv_text(header, rows, manifest_hash, flags))


def read_csv(path):
    """Header and float rows of an artifact CSV (comment lines skipped, blanks as nan)."""
    header, rows = None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        rows.append(cells)
    return header, rows


def distribution_rows(edges, mass, never):
    rows = [(edges[i], edges[i + 1], mass[i]) for i in range(len(mass))]
    rows.append(("never", None, never))
    return rows


PLOT_SCRIPT = '''\
"""Plot the CSV artifacts of this run directory (needs matplotlib)."""

import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

here = Path(sys.argv[1] if len(sys.argv) > 1 else __file__).resolve()
here = here if here.is_dir() else here.parent


def load(name):
    path = here / name
    if not path.exists():
        return None, None
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    head = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    return head, rows


fig, axes = plt.subplots(1, 2, figsize=(11, 4))
head, rows = load("record.csv")
if rows:
    data = np.array([[float(c) if c else np.nan for c in r] for r in rows])
    col = {h: i for i, h in enumerate(head)}
    axes[0].plot(data[:, col["t"]], data[:, col["interior_prob"]], label="interior")
    axes[0].plot(data[:, col["t"]], data[:, col["surface_prob"]], label="surface")
    axes[0].set_xlabel("t")
    axes[0].legend()
head, rows = load("arrival.csv")
if rows:
    bins = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows if r[0] != "never"])
    axes[1].stairs(bins[:, 2] / (bins[:, 1] - bins[:, 0]), np.append(bins[:, 0], bins[-1, 1]))
    axes[1].set_xlabel("arrival time")
    axes[1].set_ylabel("density")
head, rows = load("compare.csv")
if rows:
    data = np.array([[float(c) for c in r] for r in rows])
    for i, name in enumerate(head[1:], start=1):
        axes[1].plot(data[:, 0], data[:, i], label=name)
    axes[1].legend()
fig.tight_layout()
fig.savefig(here / "plot.png", dpi=120)
'''


def write_plot_script(path) -> Path:
    return atomic_write(path, PLOT_SCRIPT)
