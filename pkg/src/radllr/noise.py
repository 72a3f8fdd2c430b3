"""Symmetric domain-label noise and the minority priors it induces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, LabeledDataset, RngSeed
from .synthgen import check_prior


def check_noise(p: float) -> float:
    p = float(p)
    if not (0.0 <= p <= 0.5):
        raise DataError("invalid-noise-level", f"p={p} not in [0, 1/2]")
    return p


@dataclass(frozen=True)
class NoiseModel:
    p: float
    num_domains: int = 2

    def __post_init__(self):
        check_noise(self.p)
        if self.num_domains < 2:
            raise DataError("invalid-noise-level", "need at least two domains")


def flip_mask(n: int, p: float, seed: RngSeed) -> np.ndarray:
    """Rows whose domain label is replaced.

    The mask is ``u < p`` for one uniform draw per row, so for a fixed seed
    the flipped set at a smaller ``p`` is contained in the set at a larger
    ``p``.
    """
    return seed.generator().random(n) < p


def inject(data: LabeledDataset, model: NoiseModel, seed: RngSeed | int = 0) -> LabeledDataset:
    """Copy of ``data`` where each domain label is, with probability ``p``,
    replaced by a uniform draw from the other ``M - 1`` domains."""
    p = check_noise(model.p)
    M = model.num_domains
    if data.num_domains > M:
        raise DataError("invalid-label", f"dataset has {data.num_domains} domains, noise model {M}")
    if not isinstance(seed, RngSeed):
        seed = RngSeed(int(seed), "noise")
    rng = seed.generator()
    u = rng.random(data.n)
    shift = 1 + rng.integers(0, M - 1, size=data.n) if M > 2 else np.ones(data.n, dtype=np.int64)
    d = np.where(u < p, (data.d + shift) % M, data.d)
    return data.replace(d=d, num_domains=M)


def noisy_minority_prior(pi0: float, p: float) -> float:
    """Minority prior seen through noisy domain labels."""
    pi0, p = check_prior(pi0), check_noise(p)
    return (1 - p) * pi0 + p * (0.5 - pi0)


def ds_effective_prior(pi0: float, p: float) -> float:
    """True per-group minority prior after downsampling on noisy labels.

    Falls from 1/4 at ``p = 0`` to ``pi0`` at ``p = 1/2``.
    """
    pi0, p = check_prior(pi0), check_noise(p)
    q = noisy_minority_prior(pi0, p)
    if q <= 0.0 or q >= 0.5:
        raise DataError("invalid-prior", f"noisy prior {q} leaves an empty group")
    return (1 - p) * pi0 / (4 * q) + p * pi0 / (4 * (0.5 - q))
