"""Seed handling.

All randomness in a run flows from one root seed through named sub-streams,
so that e.g. changing the sampler stream cannot perturb weight init.
Stream names in use: "data" (dataset generation), "init" (weight init),
"dropout" (train-mode generator noise), "sampler" (pair sampling),
"pretrain" (attribute-predictor init and batch shuffling).
"""

from __future__ import annotations

import numpy as np

STREAMS = ("data", "init", "dropout", "sampler", "pretrain")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named PCG64 sub-stream of `seed`."""
    if name not in STREAMS:
        raise ValueError(f"unknown rng stream {name!r}; expected one of {STREAMS}")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(STREAMS))
    return np.random.Generator(np.random.PCG64(children[STREAMS.index(name)]))


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-compatible snapshot of a generator's bit-generator state."""
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
