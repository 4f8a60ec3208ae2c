"""Counter-based random streams.

Every station owns a fixed block of uniforms in a Philox stream keyed by the
seed, so any partition of the stations draws exactly the same numbers as one
sequential pass.
"""

import numpy as np

# uniforms reserved per station; must be a multiple of 4 (one Philox counter = 4 doubles)
UNIFORMS_PER_STATION = 8


def philox_key(seed):
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def spawn_seeds(master_seed, n):
    """Derive ``n`` independent integer seeds from a master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def station_uniforms(seed, start, stop):
    """Uniform block of shape (stop - start, UNIFORMS_PER_STATION) for stations [start, stop)."""
    start, stop = int(start), int(stop)  # advance() rejects numpy integers
    bg = np.random.Philox(key=philox_key(seed))
    bg.advance(start * (UNIFORMS_PER_STATION // 4))
    u = np.random.Generator(bg).random((stop - start) * UNIFORMS_PER_STATION)
    return u.reshape(stop - start, UNIFORMS_PER_STATION)


def partitioned_uniforms(seed, n, n_parts=1):
    """Same result as ``station_uniforms(seed, 0, n)``, assembled from ``n_parts`` chunks."""
    edges = np.linspace(0, n, max(1, n_parts) + 1).astype(int)
    if n_parts <= 1:
        return station_uniforms(seed, 0, n)
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n_parts) as pool:
        blocks = list(pool.map(lambda ab: station_uniforms(seed, *ab), zip(edges[:-1], edges[1:])))
    return np.concatenate(blocks, axis=0)
