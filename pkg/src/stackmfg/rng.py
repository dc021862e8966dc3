"""Counter-based random streams for reproducible Monte Carlo.

Each (master_seed, path, agent) triple owns an independent Philox stream;
agent 0 is the common noise, agents 1..N the followers.  Streams are
created on demand from the key alone, so results do not depend on how
paths are scheduled across workers and adding followers never perturbs
the streams of existing ones.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream", "normals", "brownian_increments"]

_U32 = 1 << 32


def stream(master_seed: int, path: int, agent: int) -> np.random.Generator:
    """Generator for one (path, agent) pair under a master seed."""
    if not 0 <= path < _U32:
        raise ValueError(f"path index {path} outside [0, 2^32)")
    if not 0 <= agent < _U32:
        raise ValueError(f"agent index {agent} outside [0, 2^32)")
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, (path << 32) | agent],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normals(master_seed: int, path: int, agent: int, count: int) -> np.ndarray:
    return stream(master_seed, path, agent).standard_normal(count)


def brownian_increments(master_seed: int, path: int, agents, nsteps: int,
                        dt: float) -> np.ndarray:
    """Increments of independent Brownian motions, one row per agent.

    Row order follows the agents iterable; each row is the full horizon of
    one stream scaled to variance dt per step.
    """
    agents = list(agents)
    out = np.empty((len(agents), nsteps))
    root = np.sqrt(dt)
    for row, agent in enumerate(agents):
        out[row] = normals(master_seed, path, agent, nsteps)
    out *= root
    return out
