"""Band-limited smooth test fields.

Tangential dependence is a trigonometric polynomial with integer
frequencies ``|k1|, |k2| <= modes``; the ``y3`` dependence is a slowly
varying cosine (period 2 on the torus so the field stays periodic).
"""

from __future__ import annotations

import numpy as np

from . import grid as g


def band_limited(grid: g.Grid, rng: np.random.Generator, modes: int = 3,
                 ncomp: int | None = None, normal: bool = True) -> np.ndarray:
    """Random field with unit-order amplitude, normalised to max-abs 1 per component."""
    comps = 1 if ncomp is None else ncomp
    Y1, Y2, Y3 = grid.coords
    out = np.zeros((comps,) + grid.shape)
    for c in range(comps):
        acc = np.zeros(grid.shape)
        for k1 in range(-modes, modes + 1):
            for k2 in range(0, modes + 1):
                amp = rng.normal() / (1.0 + k1 * k1 + k2 * k2)
                ph = rng.uniform(0.0, 2.0 * np.pi)
                term = np.cos(2.0 * np.pi * (k1 * Y1 + k2 * Y2) + ph)
                if normal:
                    term = term * normal_profile(grid, Y3, rng)
                acc += amp * term
        out[c] = acc / np.abs(acc).max()
    return out[0] if ncomp is None else out


def normal_profile(grid: g.Grid, Y3: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    ph = rng.uniform(0.0, 2.0 * np.pi)
    if grid.is_slab:
        return np.cos(rng.uniform(0.3, 1.2) * Y3 + ph)
    return np.cos(np.pi * rng.integers(0, 2) * Y3 + ph)


def tangential_only(grid: g.Grid, rng: np.random.Generator, modes: int = 3,
                    ncomp: int | None = None) -> np.ndarray:
    return band_limited(grid, rng, modes, ncomp, normal=False)
