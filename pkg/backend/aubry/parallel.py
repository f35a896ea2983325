"""
Fork-join helpers.

Results always come back in input order, so output is independent of the
worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

logger = logging.getLogger(__name__)

DEFAULTS = {
    "THREADS": 1,
    "SEED": 20240611,
    "OUTPUT_DIR": "kam-output",
    "LOG_LEVEL": "WARNING",
}


def toolkit_setting(key):
    """Read ``settings.TOOLKIT[key]``, falling back to defaults outside Django."""
    try:
        from django.conf import settings

        if settings.configured:
            return getattr(settings, "TOOLKIT", {}).get(key, DEFAULTS[key])
    except ImportError:  # pragma: no cover
        pass
    return DEFAULTS[key]


def worker_count(workers=None):
    return max(1, int(workers if workers is not None else toolkit_setting("THREADS")))


def make_rng(offset=0):
    """Seeded generator; ``offset`` separates independent sampling streams."""
    return np.random.default_rng(int(toolkit_setting("SEED")) + int(offset))


def fork_join(func, items, workers=None):
    items = list(items)
    count = worker_count(workers)
    if count == 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug("fork_join: %d tasks on %d workers", len(items), count)
    with ThreadPoolExecutor(max_workers=count) as executor:
        return list(executor.map(func, items))
