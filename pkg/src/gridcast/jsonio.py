"""Deterministic JSON serialization for reports, manifests, and checkpoints.

Floating-point values are written with 17 significant digits, which
round-trips every finite double exactly; keys are sorted so identical
content always produces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math


def _encode(obj, parts: list, indent: int | None, depth: int) -> None:
    pad = "" if indent is None else "\n" + " " * (indent * depth)
    pad_close = "" if indent is None else "\n" + " " * (indent * (depth - 1))
    if obj is None or obj is True or obj is False:
        parts.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, bool):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int,)) and not isinstance(obj, bool):
        parts.append(str(int(obj)))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float {obj!r} cannot be serialized")
        parts.append(format(float(obj), ".17g"))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{")
        keys = sorted(obj)
        for i, key in enumerate(keys):
            if not isinstance(key, str):
                raise TypeError(f"JSON keys must be strings, got {key!r}")
            parts.append(pad)
            parts.append(json.dumps(key))
            parts.append(": " if indent is not None else ":")
            _encode(obj[key], parts, indent, depth + 1)
            if i < len(keys) - 1:
                parts.append(",")
        parts.append(pad_close)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            parts.append("[]")
            return
        parts.append("[")
        for i, item in enumerate(seq):
            parts.append(pad)
            _encode(item, parts, indent, depth + 1)
            if i < len(seq) - 1:
                parts.append(",")
        parts.append(pad_close)
        parts.append("]")
    else:
        # numpy scalars and similar duck types
        if hasattr(obj, "item"):
            _encode(obj.item(), parts, indent, depth)
        else:
            raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = None) -> str:
    parts: list = []
    _encode(obj, parts, indent, 1)
    if indent is not None:
        parts.append("\n")
    return "".join(parts)


def loads(text: str):
    return json.loads(text)


def config_hash(obj) -> str:
    """Stable content hash of a JSON-serializable configuration."""
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()[:16]
