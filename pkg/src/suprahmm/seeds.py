"""Derive independent, reproducible component seeds from one root seed."""
import hashlib


def derive_seed(root: int, *parts) -> int:
    key = "|".join([str(int(root))] + [str(p) for p in parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1
