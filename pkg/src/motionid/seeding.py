"""Derivation of independent sub-seeds from one global seed."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, *labels) -> int:
    """63-bit seed from ``seed`` and role labels, e.g. ``derive_seed(7, "split")``.

    The value is the first 8 bytes of SHA-256 over ``"seed/label/..."``.
    """
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1
