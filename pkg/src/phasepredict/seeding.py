"""Stable child-seed derivation.

A child seed is the first 8 bytes (big endian) of
``sha256(f"{master}/{role}/{index}")``. The rule depends on nothing but its
three inputs, so seeds stay valid across library and NumPy versions.
"""
import hashlib


def derive_seed(master: int, role: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(master)}/{role}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1  # keep it a positive signed 64-bit value


def derive_seeds(master: int, role: str, count: int, start: int = 0) -> list[int]:
    return [derive_seed(master, role, i) for i in range(start, start + count)]
