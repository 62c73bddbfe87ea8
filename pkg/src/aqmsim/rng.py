"""Named, reproducible random substreams derived from one master seed.

Each consumer (topology randomization, epsilon-greedy draws, dropout masks,
weight init, trace synthesis) gets its own stream keyed by a string name, so
adding draws in one place never perturbs another.
"""
from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(name: str) -> int:
    """Stable 64-bit digest of a stream name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


class RngHub:
    """Factory for independent numpy Generators tied to a master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def stream(self, name: str) -> np.random.Generator:
        seq = np.random.SeedSequence([self.master_seed, substream_seed(name)])
        return np.random.default_rng(seq)
