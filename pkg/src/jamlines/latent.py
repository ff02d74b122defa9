"""Diagonal-Gaussian latent math shared by every model in the package.

All math here runs in float64 regardless of what precision the models train
in, so closed forms can be checked against numerical quadrature at tight
tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

NoiseSource = Union[np.random.Generator, Callable[[int], np.ndarray]]


@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    """Gaussian with diagonal covariance, given as per-dimension mean/stddev."""

    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        stddev = np.atleast_1d(np.asarray(self.stddev, dtype=np.float64))
        if mean.ndim != 1 or stddev.ndim != 1:
            raise ValueError("mean and stddev must be 1-D vectors")
        if mean.shape != stddev.shape:
            raise ValueError(
                f"dimension mismatch: mean has {mean.shape[0]} entries, "
                f"stddev has {stddev.shape[0]}"
            )
        if not np.isfinite(mean).all() or not np.isfinite(stddev).all():
            raise ValueError("mean and stddev must be finite")
        if not (stddev > 0).all():
            raise ValueError("stddev must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", stddev)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        return cls(np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class SamplingConfig:
    """Temperature and seed for reparameterized sampling."""

    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def _draw(noise_source: NoiseSource, n: int) -> np.ndarray:
    if isinstance(noise_source, np.random.Generator):
        eps = noise_source.standard_normal(n)
    else:
        eps = np.asarray(noise_source(n), dtype=np.float64)
    if eps.shape != (n,):
        raise ValueError(f"noise source returned shape {eps.shape}, wanted ({n},)")
    return eps


def sample(
    g: DiagonalGaussian,
    cfg: SamplingConfig = SamplingConfig(),
    noise_source: NoiseSource | None = None,
) -> np.ndarray:
    """Reparameterized draw z = mean + temperature * (eps * stddev).

    The noise is elementwise standard normal, one draw per dimension.  With
    no explicit noise source, a generator seeded from ``cfg.seed`` is used,
    so results are reproducible.
    """
    if noise_source is None:
        noise_source = np.random.default_rng(cfg.seed)
    eps = _draw(noise_source, g.dim)
    return g.mean + cfg.temperature * (eps * g.stddev)


def kl_to_standard_normal(g: DiagonalGaussian) -> float:
    """KL(g || N(0, I)), closed form for diagonal Gaussians."""
    var = g.stddev**2
    return float(0.5 * np.sum(g.mean**2 + var - 1.0 - np.log(var)))


def kl_between(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """KL(q || p) between two diagonal Gaussians of equal dimension."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: q has {q.dim}, p has {p.dim}")
    ratio = (q.stddev / p.stddev) ** 2
    return float(
        0.5 * np.sum(ratio + ((q.mean - p.mean) / p.stddev) ** 2 - 1.0 - np.log(ratio))
    )
