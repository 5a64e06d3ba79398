"""Prompt template assets and rendering.

Templates live next to this module as ``.txt`` files and use
``{placeholder}`` slots.  Rendering substitutes only the names actually
provided, so literal JSON braces inside templates survive untouched and
a partially rendered template (used by the dry-run audit) keeps its
remaining slots visible.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

__all__ = ["load", "placeholders", "render"]

_PLACEHOLDER_RE = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


@lru_cache(maxsize=None)
def load(name: str) -> str:
    """Read a template by bare name (no extension)."""
    ref = resources.files(__package__).joinpath(f"{name}.txt")
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise KeyError(f"no prompt template named {name!r}") from None


def placeholders(name: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(load(name)))


def render(name: str, **values: object) -> str:
    """Fill a template's slots; unknown slots are left in place."""
    text = load(name)

    def substitute(match: re.Match[str]) -> str:
        key = match.group(1)
        if key in values:
            return str(values[key])
        return match.group(0)

    return _PLACEHOLDER_RE.sub(substitute, text)
