"""Seed hierarchy and small numeric helpers.

Seeds are derived with numpy's counter-based SeedSequence: a child seed is the
first 64-bit word of ``SeedSequence(parent, spawn_key=path)``. The derivation
used across the package is

    master seed -> (SCENARIO, scenario index) -> (EPISODE, episode index)
    episode seed -> (START, agent index)      start state of one agent
                 -> (SEARCH, t)               MCTS run at decision step t
                 -> (SELECT, t)               final action selection at step t
    training seed -> (INIT,)                  initial parameters
                  -> (STEP, i)                outer step i

so any single episode can be regenerated from its own seed alone.
"""
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

SCENARIO, EPISODE, START, SEARCH, SELECT, INIT, STEP, EVAL = range(8)


def derive_seed(parent: int, *path: int) -> int:
    ss = np.random.SeedSequence(int(parent), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def episode_seed(master: int, scenario_index: int, episode: int, stream: int = EPISODE) -> int:
    return derive_seed(derive_seed(master, SCENARIO, scenario_index), stream, episode)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))


def effective_sample_size(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        return 0.0
    return float(total * total / np.sum(w * w))


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """Map in worker processes; results keep the order of ``items``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
