"""Seed derivation.

Every random draw in the package descends from one master seed through
``derive_seed(master, *key)``, which hashes the key path with numpy's
``SeedSequence``. String key parts are mapped to integers with CRC32 so the
derivation is stable across processes and Python versions.

Key paths in use:

* ``(dataset_seed, i)``: channel draw of sample ``i``
* ``(dataset_seed, i, "budget")``: random power budgets of sample ``i``
* ``(dataset_seed, i, "wmmse")``: random WMMSE restarts of sample ``i``
* ``(train_seed, "model", kind)``: weight initialization
* ``(check_seed, suite, trial)``: inputs and permutations of property checks
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive_seed(master: int, *key) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 31) ^ int(lo)) & ((1 << 62) - 1)
