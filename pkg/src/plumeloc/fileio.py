"""Deterministic file helpers: canonical JSON, float formatting, hashing.

All artifact writers go through these so that a rerun with the same seed
and configuration produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json

FORMAT_VERSION = 1


def dumps_canonical(obj) -> str:
    """JSON with sorted keys and fixed separators; floats via repr round-trip."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def fmt(x) -> str:
    """Shortest round-trip decimal form of a float (ints pass through)."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable configuration."""
    return hashlib.sha256(dumps_canonical(obj).encode()).hexdigest()[:16]
