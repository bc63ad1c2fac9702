"""Flat-file persistence: CSV with provenance comments, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from .. import __version__


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows, cfg_sha, footer=None, comments=()):
    """Comma-separated, LF endings, floats at 17 significant digits.

    The file starts with '# config_sha256=...' and '# version=...' lines;
    an optional JSON footer is appended as one '#' line.
    """
    lines = [f"# config_sha256={cfg_sha}", f"# version={__version__}"]
    lines += [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for r in rows:
        lines.append(",".join(fmt(v) for v in r))
    if footer is not None:
        lines.append("#" + canonical_json(footer))
    _write(path, "\n".join(lines) + "\n")


def write_json(path, obj, cfg_sha):
    doc = {"config_sha256": cfg_sha, "version": __version__, "result": _plain(obj)}
    _write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_csv_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read matrix from {path}: {exc}") from exc


def read_csv(path):
    """(comments, header, rows as strings) of a file written by write_csv."""
    comments, header, rows = [], None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    return comments, header, rows
