"""Counter-based random streams keyed by (master seed, run index, purpose)."""

import numpy as np

STREAM_TAGS = {
    "train_policy": 1,
    "train_env": 2,
    "eval_policy": 3,
    "eval_env": 4,
}


def stream(seed: int, run_index: int = 0, tag: str = "train_policy", *sub: int) -> np.random.Generator:
    """Independent Philox stream; identical inputs always give identical draws.

    ``sub`` extends the key, e.g. with the index of an evaluation point.
    """
    key = (int(run_index), STREAM_TAGS[tag], *(int(x) for x in sub))
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
