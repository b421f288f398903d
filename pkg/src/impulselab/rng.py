"""Seed derivation and block-wise noise streams.

Every replication owns its own generator seeded from ``(master_seed, *keys)``
through :class:`numpy.random.SeedSequence`, so results do not depend on the
order in which replications are executed.
"""
import numpy as np

BLOCK = 1 << 15


def derive_seed(master_seed, *keys):
    """Stable 63-bit seed for the replication identified by ``keys``."""
    ss = np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class NoiseStream:
    """Standard normal (and optionally uniform) draws served in fixed blocks.

    Kernels consume a prefix of the current block and report how many draws
    they used; :meth:`advance` moves the cursor. Block boundaries therefore
    never change the realised path.
    """

    def __init__(self, seed, block=BLOCK, uniforms=True):
        self.seed = int(seed)
        self.block = int(block)
        self.uniforms = uniforms
        self._gen = np.random.Generator(np.random.SFC64(self.seed))
        self._pos = 0
        self._refill()

    def _refill(self):
        self.z = self._gen.standard_normal(self.block)
        if self.uniforms:
            self.u = self._gen.random(self.block)
        else:
            self.u = np.empty(0)
        self._pos = 0

    @property
    def pos(self):
        if self._pos >= self.block:
            self._refill()
        return self._pos

    def advance(self, n):
        self._pos += int(n)
        if self._pos > self.block:
            raise ValueError("consumed past the end of the noise block")
