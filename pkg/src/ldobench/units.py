"""Engineering-notation number parsing and formatting.

Suffixes follow the usual SPICE convention: f p n u m k meg g, matched
case-insensitively.  "meg" must be checked before "m" so that 1meg is a
million and 1m is a thousandth.
"""

from __future__ import annotations

# Longest suffix first so "meg" wins over "m".
_SUFFIXES = [
    ("meg", 1e6),
    ("f", 1e-15),
    ("p", 1e-12),
    ("n", 1e-9),
    ("u", 1e-6),
    ("m", 1e-3),
    ("k", 1e3),
    ("g", 1e9),
]


def parse_value(text: str) -> float:
    """Parse a number with an optional engineering suffix ("2.2u", "1meg").

    Raises ValueError for anything that is not a number.
    """
    s = text.strip().lower()
    if not s:
        raise ValueError("empty value")
    for suffix, mult in _SUFFIXES:
        if s.endswith(suffix):
            body = s[: -len(suffix)]
            # Guard against bare suffixes and exponent collisions like "1e-3"
            # (which ends in neither a digit nor a dot before the suffix).
            if body:
                try:
                    return float(body) * mult
                except ValueError:
                    break
    return float(s)


def format_value(value: float) -> str:
    """Shortest exact representation, no suffix (round-trips through float)."""
    return repr(float(value))
