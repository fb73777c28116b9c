"""Stable seed derivation.

Every random decision in the pipeline flows from an explicit integer seed.
Per-item seeds are derived by hashing the global seed together with stable
identifiers (building id, epoch, variant index), so parallel workers produce
order-independent results and reruns are bit-identical.
"""

import hashlib


def derive_seed(*parts: int | str) -> int:
    """Collapse (seed, id, epoch, ...) into a uint64 seed, stably across runs."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, int):
            h.update(b"i")
            h.update(str(part).encode("ascii"))
        else:
            h.update(b"s")
            h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")
