"""Compact JSON writer that prints every float with 17 significant digits.

``json.dumps`` uses the shortest round-trip repr; the metadataset format
pins 17 digits so other languages read back the identical double. Non-finite
floats become ``null``.
"""

from __future__ import annotations

import json
import math

import numpy as np

_str = json.encoder.encode_basestring_ascii


def format_float(x: float) -> str | None:
    if not math.isfinite(x):
        return None
    s = "%.17g" % x
    if "." not in s and "e" not in s:
        s += ".0"
    return s


def dumps(obj) -> str:
    parts: list[str] = []
    _encode(obj, parts)
    return "".join(parts)


def _encode(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        s = format_float(float(obj))
        out.append("null" if s is None else s)
    elif isinstance(obj, str):
        out.append(_str(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for k, (key, value) in enumerate(obj.items()):
            if k:
                out.append(",")
            out.append(_str(str(key)))
            out.append(":")
            _encode(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for k, value in enumerate(obj):
            if k:
                out.append(",")
            _encode(value, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def loads(text: str):
    return json.loads(text)
