"""Counter-based random streams (Philox4x32-10).

A draw is a pure function of ``(seed, chain, iteration, step, entity, index)``,
so updates that run in parallel over persons or observations give the same
numbers no matter how the work is scheduled.

Counter layout of one Philox block::

    c0 = entity id          c1 = iteration
    c2 = chain << 16 | step c3 = block index within the sub-stream

Each block yields two 53-bit uniforms on the open interval (0, 1).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ._backend import njit

MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_S16 = np.uint64(16)
_INV53 = 1.0 / 9007199254740992.0

# step tags keep the sub-streams of different updates apart
STEP_OMEGA = 1
STEP_TAU = 2
STEP_MU = 3
STEP_THETA = 4
STEP_BETA = 5
STEP_Z = 6
STEP_ATOMS = 7
STEP_WEIGHTS = 8
STEP_PI = 9
STEP_PRED_STAR = 10
STEP_PRED_POST = 11
STEP_INIT = 12
STEP_DATA = 13
STEP_USER = 100


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on 32-bit words held in uint64 values."""
    for _ in range(10):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0 = p0 >> _S32
        lo0 = p0 & MASK32
        hi1 = p1 >> _S32
        lo1 = p1 & MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & MASK32
        k1 = (k1 + _W1) & MASK32
    return c0, c1, c2, c3


@njit(cache=True)
def uniform_block(k0, k1, c0, c1, c2, block):
    """Two open-interval uniforms from one Philox block."""
    r0, r1, r2, r3 = philox4x32(
        np.uint64(c0), np.uint64(c1), np.uint64(c2), np.uint64(block), k0, k1
    )
    a = ((r0 << _S32) | r1) >> _S11
    b = ((r2 << _S32) | r3) >> _S11
    return (float(a) + 0.5) * _INV53, (float(b) + 0.5) * _INV53


def philox4x32_np(c0, c1, c2, c3, k0, k1):
    """Vectorized twin of :func:`philox4x32` over uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & MASK32,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & MASK32,
        )
        k0 = (k0 + _W0) & MASK32
        k1 = (k1 + _W1) & MASK32
    return c0, c1, c2, c3


def uniform_block_np(k0, k1, c0, c1, c2, block):
    """Vectorized :func:`uniform_block`; returns two float arrays."""
    r0, r1, r2, r3 = philox4x32_np(c0, c1, c2, block, k0, k1)
    a = ((r0 << _S32) | r1) >> _S11
    b = ((r2 << _S32) | r3) >> _S11
    return (a.astype(np.float64) + 0.5) * _INV53, (b.astype(np.float64) + 0.5) * _INV53


def split_seed(seed: int) -> tuple[np.uint64, np.uint64]:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def lane(chain: int, step: int) -> int:
    if not (0 <= chain < 2**16 and 0 <= step < 2**16):
        raise ValueError("chain and step must each fit in 16 bits")
    return (int(chain) << 16) | int(step)


@dataclasses.dataclass(frozen=True)
class RngStream:
    """A keyed sub-stream of uniforms.

    Identical fields give identical draws. Vectorized samplers take element
    ``t`` from the stream whose entity id is ``entity + t``.
    """

    seed: int
    chain: int = 0
    iteration: int = 0
    entity: int = 0
    step: int = STEP_USER

    def __post_init__(self):
        split_seed(self.seed)
        lane(self.chain, self.step)
        for name in ("iteration", "entity"):
            v = getattr(self, name)
            if not 0 <= v < 2**32:
                raise ValueError(f"{name} must fit in 32 bits, got {v}")

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return split_seed(self.seed)

    @property
    def lane(self) -> int:
        return lane(self.chain, self.step)

    def replace(self, **changes) -> "RngStream":
        return dataclasses.replace(self, **changes)

    def uniforms(self, n: int) -> np.ndarray:
        """The first ``n`` uniforms of this sub-stream."""
        k0, k1 = self.key
        blocks = np.arange((n + 1) // 2, dtype=np.uint64)
        a, b = uniform_block_np(k0, k1, self.entity, self.iteration, self.lane, blocks)
        return np.column_stack([a, b]).ravel()[:n]
