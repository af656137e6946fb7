"""Named, counter-based RNG substreams.

Every random draw in the pipeline comes from a substream addressed by a
path such as ``("area:A03", "stage:imis")`` under one master seed.  Streams
are independent of execution order and of how work is split across
processes, so parallel and serial runs produce identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "spawn_key"]


def spawn_key(master_seed: int, *path: str) -> list[int]:
    """Derive a stable integer key for a named substream.

    The path is hashed so that stream identity depends only on the master
    seed and the path strings, never on creation order.
    """
    digest = hashlib.sha256("/".join(path).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return [int(master_seed) & 0xFFFFFFFFFFFFFFFF, *words]


def substream(master_seed: int, *path: str) -> np.random.Generator:
    """Return a Philox generator for the substream named by ``path``.

    Philox is counter-based: streams keyed by distinct paths are
    statistically independent, and a given (seed, path) pair yields a
    bit-identical stream on every platform and run.
    """
    seq = np.random.SeedSequence(spawn_key(master_seed, *path))
    return np.random.Generator(np.random.Philox(seq))
