"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .audio import MelSpectrogram


def as_grid(x, shape: tuple[int, int]) -> np.ndarray:
    """Coerce one spectrogram (MelSpectrogram or array) to float32 (H, W)."""
    grid = x.grid if isinstance(x, MelSpectrogram) else np.asarray(x, dtype=np.float32)
    if grid.shape != tuple(shape):
        raise ValueError(f"expected grid shaped {tuple(shape)}, got {grid.shape}")
    return np.asarray(grid, dtype=np.float32)


def as_grid_batch(X, shape: tuple[int, int]) -> np.ndarray:
    """Coerce a sequence of spectrograms to float32 (n, H, W)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        grids = X.astype(np.float32, copy=False)
        if grids.shape[1:] != tuple(shape):
            raise ValueError(f"expected grids shaped {tuple(shape)}, got {grids.shape[1:]}")
    else:
        grids = np.stack([as_grid(x, shape) for x in X])
    if grids.shape[0] == 0:
        raise ValueError("empty batch")
    return grids


def as_latent(z, dim: int) -> np.ndarray:
    """Coerce one latent code to float64 (dim,)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dim,):
        raise ValueError(f"expected latent of dimension {dim}, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ValueError("latent code must be finite")
    return z


def as_latent_batch(Z, dim: int) -> np.ndarray:
    """Coerce latent codes to float64 (n, dim); accepts a single vector too."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != dim:
        raise ValueError(f"expected latents shaped (n, {dim}), got {Z.shape}")
    if not np.isfinite(Z).all():
        raise ValueError("latent codes must be finite")
    return Z
