"""Deterministic seed derivation and an order-preserving process map."""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

ENV_THREADS = "QGMM_THREADS"


def resolve_workers(workers=None):
    """Explicit value, else $QGMM_THREADS, else the number of usable CPUs."""
    if workers is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            workers = int(env)
        else:
            try:
                workers = len(os.sched_getaffinity(0))
            except AttributeError:
                workers = os.cpu_count() or 1
    return max(1, int(workers))


def stream_seeds(seed, index, count=2):
    """``count`` 32-bit seeds for stream ``index`` of master ``seed``.

    Derived with SeedSequence spawn keys, so stream i is the same no matter
    how many other streams exist or which process computes it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return [int(s) for s in ss.generate_state(count)]


def rep_seeds(seed, reps):
    return [tuple(stream_seeds(seed, r, 2)) for r in range(reps)]


def map_ordered(fn, items, workers=None):
    """``[fn(x) for x in items]``, optionally across processes.

    Results come back in input order regardless of scheduling.
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
