"""
Seeded random streams and the trial pool.

Trial t of a run with master seed S draws from
Generator(PCG64(SeedSequence(S, spawn_key=(t,)))). SeedSequence hashes the
(entropy, spawn_key) pair into the PCG64 state, so distinct trial indices
give independent, non-overlapping streams and any trial can be replayed on
its own.
"""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import psutil

logger = logging.getLogger(__name__)


def trial_seed(master_seed, trial):
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))


def make_rng(seed):
    """Build a PCG64 generator from an int, a SeedSequence or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def trial_rng(master_seed, trial):
    return make_rng(trial_seed(master_seed, trial))


def default_workers():
    return psutil.cpu_count(logical=False) or 1


def run_trials(trial_fn, trials, threads=1):
    """Evaluate trial_fn(0..trials-1) and return the results in trial order.

    trial_fn must be picklable when threads > 1 (a module-level function or a
    functools.partial of one).
    """
    if threads is None:
        threads = default_workers()
    if threads <= 1 or trials <= 1:
        return [trial_fn(t) for t in range(trials)]
    logger.debug("Running %d trials on %d workers", trials, threads)
    chunksize = max(1, trials // (8 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(trial_fn, range(trials), chunksize=chunksize))
