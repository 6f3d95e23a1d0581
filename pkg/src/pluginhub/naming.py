"""Name and version validation shared by plugin specs, workspaces and URLs.

Plugin, workspace and workflow names embed verbatim in reference strings
(`owner/repo:Name@pin`), app URLs and on-disk paths, so the characters
used as separators in those grammars are banned outright.
"""

from __future__ import annotations

import re

from .errors import IllegalName

# Separators reserved by the reference grammar and app-URL query syntax.
FORBIDDEN_NAME_CHARS = frozenset(":@/?&")

MAX_NAME_LEN = 64

# Full semver 2.0.0 grammar.
SEMVER_RE = re.compile(
    r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)"
    r"(?:-((?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*)"
    r"(?:\.(?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*))*))?"
    r"(?:\+([0-9a-zA-Z-]+(?:\.[0-9a-zA-Z-]+)*))?$"
)


def is_valid_name(name: str) -> bool:
    if not isinstance(name, str):
        return False
    if not 1 <= len(name) <= MAX_NAME_LEN:
        return False
    return not any(c in FORBIDDEN_NAME_CHARS for c in name)


def check_name(name: str, what: str = "name") -> str:
    """Return `name` unchanged or raise IllegalName."""
    if not isinstance(name, str) or not name:
        raise IllegalName(f"{what} must be a non-empty string")
    if len(name) > MAX_NAME_LEN:
        raise IllegalName(f"{what} {name!r} exceeds {MAX_NAME_LEN} characters")
    bad = sorted(set(name) & FORBIDDEN_NAME_CHARS)
    if bad:
        raise IllegalName(f"{what} {name!r} contains reserved characters {''.join(bad)!r}")
    return name


def is_semver(version: str) -> bool:
    return isinstance(version, str) and SEMVER_RE.match(version) is not None
