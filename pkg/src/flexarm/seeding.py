"""Deterministic seed derivation.

Every stochastic stage (campaign trajectories, train/val split, weight init,
batch sampling, held-out references) draws from its own child of a single
root seed, so campaign seeds and held-out-test seeds can never collide.
"""

import numpy as np

# spawn-key domains carved out of the root seed
DOMAIN_CAMPAIGN = 0
DOMAIN_TRAINING = 1
DOMAIN_HELDOUT = 2
DOMAIN_TELEOP = 3


def child_seed_seq(root_seed: int, domain: int, index: int = 0) -> np.random.SeedSequence:
    """SeedSequence for (domain, index) under the given root seed."""
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=(domain, index))


def child_rng(root_seed: int, domain: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed_seq(root_seed, domain, index))
