from functools import wraps


def cache_by_key_fn(f):
    """
    Memoise f on its positional arguments. Collocation grids and integration
    matrices depend only on (N, a, b), so they are built once per key.
    Pass _cache=False to force a fresh computation.
    """
    cache = {}

    @wraps(f)
    def cached_fn(*args, _cache=True):
        if not _cache:
            return f(*args)
        if args in cache:
            return cache[args]
        cache[args] = f(*args)
        return cache[args]

    cached_fn.cache = cache
    return cached_fn
