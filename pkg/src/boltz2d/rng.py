"""Counter-based random streams keyed by (seed, replica, role).

Every stream is a Philox generator seeded by ``SeedSequence(seed,
spawn_key=(replica, role))``, so streams for different replicas or roles
never overlap and a given key always reproduces the same draws.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

ROLE_INIT = 0
ROLE_EVENTS = 1
ROLE_BOOTSTRAP = 2
ROLE_AUX = 3


def check_seed(seed) -> int:
    try:
        s = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    if s != seed or not 0 <= s < 2 ** 64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return s


def stream(seed: int, replica: int = 0, role: int = ROLE_EVENTS) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(replica), int(role)))
    return np.random.Generator(np.random.Philox(ss))
