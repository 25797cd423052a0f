"""Named-stream seed derivation.

All randomness in the package flows from one master seed. Subcomponents get
independent, reproducible streams by deriving a child seed from the master
seed plus a label path, so the seed a component sees does not depend on the
order in which other components happened to run.
"""
from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 63-bit child seed from a master seed and a label path."""
    key = ":".join([str(int(master))] + [str(part) for part in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
