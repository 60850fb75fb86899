"""Deterministic seed derivation.

All randomness in a run flows from one root seed; named sub-streams are
derived by hashing, so adding a consumer never perturbs the others and the
same (seed, labels) pair yields the same stream on every platform.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels: object) -> int:
    """A 63-bit seed deterministically derived from a root seed and labels.

    Labels may be strings, ints or bytes (e.g. a canonical expression key).
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"\x1f")
        if isinstance(label, bytes):
            h.update(label)
        else:
            h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1
