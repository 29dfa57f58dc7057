"""Deterministic per-pixel uniform streams.

``random`` mode draws from a counter-based Philox generator keyed by
(seed, pass, stream); a pixel's numbers are fixed by its position in the
output array, so results do not depend on how work is split. ``sobol``
mode uses one scrambled Sobol point per pass, toroidally shifted per pixel
(Cranley-Patterson rotation).
"""
from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def philox(*key):
    """A Philox-backed generator for an integer key tuple."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(ss))


class Sampler:
    def __init__(self, seed=0, mode="random", dims=4, stream=0):
        if mode not in ("random", "sobol"):
            raise ValueError(f"unknown sampler mode {mode!r}")
        self.seed = int(seed)
        self.mode = mode
        self.dims = dims
        self.stream = stream
        self._sobol_cache = None
        self._shift = {}

    def _sobol_points(self, count):
        if self._sobol_cache is None or len(self._sobol_cache) < count:
            m = int(np.ceil(np.log2(max(count, 2))))
            eng = qmc.Sobol(d=self.dims, scramble=True, seed=philox(self.seed, self.stream, 7))
            self._sobol_cache = eng.random_base2(m)
        return self._sobol_cache

    def uniforms(self, pass_index, shape):
        """Array of shape ``shape + (dims,)`` in [0, 1) for one pass."""
        shape = tuple(shape)
        if self.mode == "random":
            return philox(self.seed, self.stream, pass_index).random(shape + (self.dims,))
        if shape not in self._shift:
            self._shift[shape] = philox(self.seed, self.stream, 0xC0FFEE).random(shape + (self.dims,))
        point = self._sobol_points(pass_index + 1)[pass_index]
        return np.mod(point + self._shift[shape], 1.0)
