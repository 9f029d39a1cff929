"""Lexical path identity.

Paths are compared purely as normalized strings; two spellings of the same
physical object (hard links, `a/./b`, symlink aliases) are distinct queue
keys unless they normalize to the same string.
"""

from __future__ import annotations

import posixpath


def normalize(path: str) -> str:
    """Collapse a kernel-style path to its canonical lexical form.

    Absolute, no trailing slash (except the root itself), no `.`/`..`
    segments, no duplicate separators.  Purely lexical: nothing is resolved
    against any store.
    """
    p = posixpath.normpath("/" + path)
    if p.startswith("//"):  # POSIX allows normpath to keep a double slash
        p = "/" + p.lstrip("/")
    return p


def is_normalized(path: str) -> bool:
    return bool(path) and path == normalize(path)


def parent_of(path: str) -> str | None:
    """Parent of a normalized path, or None for the root."""
    if path == "/":
        return None
    return posixpath.dirname(path)


def is_direct_child(path: str, directory: str) -> bool:
    return parent_of(path) == directory


def join(directory: str, name: str) -> str:
    return normalize(posixpath.join(directory, name))
