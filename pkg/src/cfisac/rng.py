"""Seeded random substreams.

Every random draw in the package goes through :func:`substream`. A stream is
identified by ``(master_seed, drop, purpose, trial)``; the purpose name maps to a
fixed integer so that adding a new purpose never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np

# Append-only. Reordering would change every seeded result.
PURPOSES = {
    "ue_positions": 0,
    "large_scale": 1,
    "comm_channel": 2,
    "pilot_noise": 3,
    "moments": 4,
    "detect_h0": 5,
    "detect_h1": 6,
    "calibrate": 7,
    "ap_positions": 8,
    "rate_check": 9,
}


def substream(master_seed: int, purpose: str, trial: int = 0, drop: int = 0) -> np.random.Generator:
    """Return an independent generator for one ``(drop, purpose, trial)`` triple."""
    try:
        pid = PURPOSES[purpose]
    except KeyError:
        raise KeyError(f"unknown RNG purpose {purpose!r}") from None
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(drop), pid, int(trial)))
    return np.random.Generator(np.random.PCG64(ss))


def complex_normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``scale``."""
    s = np.sqrt(scale / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
