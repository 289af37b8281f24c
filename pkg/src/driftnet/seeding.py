"""Deterministic seed derivation.

Every stochastic component in the package receives its randomness through a
child seed derived here, never through shared global state.  Child seeds are
a pure function of the master seed and a label path (home id, day, device
class, tree index, ...), so parallel and serial execution orders produce
identical results.
"""

from __future__ import annotations

import hashlib
import os

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (output, next_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64, state


def mix_seed(master: int, *parts: int | str) -> int:
    """64-bit hash mix of a master seed and a label path.

    Stable across processes and platforms (unlike ``hash()``), so derived
    seeds can be recorded in manifests and reproduced later.
    """
    h = hashlib.sha256()
    h.update(b"driftnet")
    h.update(int(master).to_bytes(8, "little", signed=False))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        else:
            h.update(b"i" + int(part).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little")


def worker_threads() -> int:
    """Parallelism cap from DRIFTNET_THREADS (0 or unset = auto)."""
    raw = os.environ.get("DRIFTNET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)
