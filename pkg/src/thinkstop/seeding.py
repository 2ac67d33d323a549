"""Stable seed derivation.

Every stochastic component derives its RNG seed from a master seed plus a
structural path (problem id, run index, iteration, candidate slot) so that
reordering work items never changes any individual result, and two full
invocations with the same master seed are byte-identical.
"""

from __future__ import annotations

import hashlib


def stable_seed(*parts: object) -> int:
    """Derive a 63-bit seed from a tuple of parts, independent of PYTHONHASHSEED."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
