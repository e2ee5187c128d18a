"""Deterministic random streams derived from a single master seed.

Every source of randomness in the package is a counter-based Philox
generator whose key is derived by hashing a namespace label, the master
seed, and any extra indices (sequence number, epoch, ...). Streams with
different derivation paths are independent, and results never depend on
the order in which streams are consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Namespace labels. Keeping them in one place makes collisions impossible
# to introduce by accident.
NS_NOISE = "noise"
NS_PLAIN_TOKENS = "plain-tokens"
NS_SPEC_CHOICE = "spec-choice"
NS_MODEL_INIT = "model-init"
NS_SHUFFLE = "shuffle"
NS_TRIALS = "trials"
NS_ATTACK = "attack"
NS_SPLIT = "split"
NS_SYNTH = "synthetic"


def derive_key(*parts: object) -> int:
    """Hash (namespace, seed, indices, ...) into a 128-bit Philox key."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:16], "little")


def derive_stream(*parts: object) -> np.random.Generator:
    """Return an independent generator for the given derivation path."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))
