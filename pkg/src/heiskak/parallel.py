import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    """Worker cap from ``HEISKAK_THREADS`` (default 1)."""
    raw = os.environ.get("HEISKAK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"HEISKAK_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def ordered_map(fn, items):
    """``list(map(fn, items))`` spread over threads; output order is input order."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
