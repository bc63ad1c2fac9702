"""Index-ordered map over a thread pool."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def run_indexed(fn, count, threads=1, chunk=16):
    """[fn(0), ..., fn(count-1)]; blocks of ``chunk`` indices per task.

    Results are placed by index, so the output never depends on ``threads``.
    """
    count = int(count)
    starts = list(range(0, count, chunk))

    def block(s):
        return s, [fn(i) for i in range(s, min(s + chunk, count))]

    out = [None] * count
    if threads is None or threads <= 1:
        for s, vals in map(block, starts):
            out[s:s + len(vals)] = vals
        return out
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        for s, vals in ex.map(block, starts):
            out[s:s + len(vals)] = vals
    return out
