"""Deterministic sub-seed derivation.

Every randomized stage draws from its own label so that pipelines stay
bit-reproducible for a fixed master seed no matter which stages run or in
which order.
"""

import hashlib

import numpy as np

from ._validation import check_seed

# Labels used across the package; kept in one place so collisions are easy
# to rule out.
LBS_INIT = "lbs-init"
LBS_TRAIN = "lbs-train"
JACOBIAN_INIT = "jacobian-init"
JACOBIAN_TRAIN = "jacobian-train"
JACOBIAN_HOLDOUT = "jacobian-holdout"
CUBATURE = "cubature"
FIT = "fit"


def derive_seed(master, label):
    """Map (master seed, stage label) to a stable 63-bit sub-seed."""
    master = check_seed(master, "master seed")
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def rng_for(master, label):
    """Generator seeded from derive_seed(master, label)."""
    return np.random.default_rng(derive_seed(master, label))
