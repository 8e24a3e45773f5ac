"""Counter-based random streams keyed by purpose and position."""
import numpy as np

TRAIN_NOISE = 0
TRAIN_START = 1
EVAL_NOISE = 2
EVAL_START = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the key (seed, purpose, ...).

    Distinct keys give independent streams, so draws do not depend on the
    order in which trajectories are simulated.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
