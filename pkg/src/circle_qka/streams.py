"""Deterministic random substreams.

One 64-bit master seed feeds every random choice of a run. Each consumer asks
for a stream by a label tuple such as ``("A", 3, "decoys")``; the stream is a
``numpy.random.Generator`` seeded from ``SeedSequence(master, spawn_key)`` where
the spawn key is the label tuple mapped to 32-bit integers. Streams therefore
do not depend on the order in which they are requested.
"""

import hashlib
import struct
from typing import Dict, Tuple, Union

import numpy as np

from .errors import RejectedInputError

SEED_MAX = 2**64 - 1

Label = Union[str, int]


def check_seed(seed: int) -> int:
    """Return ``seed`` as an int after checking it fits in 64 unsigned bits.

    Raises:
        RejectedInputError: If the seed is negative or too large.
    """
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise RejectedInputError(
            f"seed must be an unsigned 64-bit integer, got {seed}", field="seed"
        )
    return seed


def _label_key(label: Label) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_trial_seed(master_seed: int, sweep_index: int, trial_index: int) -> int:
    """Seed for one Monte Carlo trial.

    blake2b (8-byte digest, person=b"qka-trial") over the little-endian packing
    of ``(master_seed, sweep_index, trial_index)`` as three uint64 values.
    """
    payload = struct.pack("<QQQ", check_seed(master_seed), sweep_index, trial_index)
    digest = hashlib.blake2b(payload, digest_size=8, person=b"qka-trial").digest()
    return int.from_bytes(digest, "little")


class RandomStreams:
    """Cache of labelled generators derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = check_seed(master_seed)
        self._streams: Dict[Tuple[int, ...], np.random.Generator] = {}

    def get(self, *labels: Label) -> np.random.Generator:
        key = tuple(_label_key(label) for label in labels)
        stream = self._streams.get(key)
        if stream is None:
            sequence = np.random.SeedSequence(entropy=self.master_seed, spawn_key=key)
            stream = np.random.default_rng(sequence)
            self._streams[key] = stream
        return stream
