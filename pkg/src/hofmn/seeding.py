"""Deterministic sub-seed derivation from one root seed."""

import hashlib


def derive_seed(root: int, *labels) -> int:
    """Hash ``root`` and a label path into a 63-bit seed."""
    text = "/".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1
