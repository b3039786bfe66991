"""Deterministic 64-bit seed derivation.

Parallel units of work (simulated blocks, ensemble passes, training steps)
each get an independent child seed derived from a master seed and an index,
so results never depend on execution order.
"""

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: full-avalanche 64-bit mix."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def split_seed(seed: int, *indices: int) -> int:
    """Derive a child seed from ``seed`` and one or more indices.

    Folding each index through mix64 keeps children decorrelated, so e.g.
    split_seed(s, epoch, step) gives an independent stream per step.
    """
    child = mix64(seed & _MASK64)
    for index in indices:
        child = mix64(child ^ mix64((index + 1) & _MASK64))
    return child
