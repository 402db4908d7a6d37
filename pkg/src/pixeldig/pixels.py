"""Pixel ID extraction from archived HTML.

Regex/scanner based on purpose: archived pages are frequently malformed and
the tracker base code is a known template, so a DOM parse buys nothing.
Matching runs over raw bytes and every hit carries re-checkable evidence
(pattern kind + byte offset).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Replay prefixes injected by the archive in front of embedded URLs,
# including modifier forms like `20200101000000js_/`.
_ARCHIVE_PREFIX = re.compile(rb"(?:https?:)?//web\.archive\.org/web/\d{1,14}[a-z_]*/")

# An ID is 5-20 digits not embedded in a longer digit run.
_ID = rb"(?<!\d)(?P<id>\d{5,20})(?!\d)"

_PATTERNS: list[tuple[str, re.Pattern[bytes]]] = [
    ("fbq_init", re.compile(
        rb"fbq\s*\(\s*(['\"])init\1\s*,\s*(['\"])" + _ID + rb"\2", re.DOTALL)),
    ("tr_pixel_url", re.compile(
        rb"facebook\.com/tr/?\?[^\"'<>\s]*?\bid=" + _ID)),
    ("config_script_url", re.compile(
        rb"connect\.facebook\.net/signals/config/" + _ID)),
]

_HTML_COMMENT = re.compile(rb"<!--.*?-->", re.DOTALL)


@dataclass(frozen=True)
class PixelEvidence:
    pixel_id: str
    kind: str
    offset: int
    length: int
    in_comment: bool


def is_valid_pixel_id(pixel_id: str) -> bool:
    return pixel_id.isdigit() and 5 <= len(pixel_id) <= 20


def strip_archive_rewrites(html: bytes) -> bytes:
    """Remove archive replay prefixes so original third-party hosts show."""
    return _ARCHIVE_PREFIX.sub(b"", html)


def extract_pixel_ids(html: bytes) -> tuple[set[str], list[PixelEvidence]]:
    """Find Pixel IDs via base-code init calls and tracker URLs.

    Returns the union of IDs plus one evidence entry per raw match. IDs seen
    only inside HTML comments are still reported, flagged `in_comment`.
    """
    comment_spans = [m.span() for m in _HTML_COMMENT.finditer(html)]

    def commented(pos: int) -> bool:
        return any(a <= pos < b for a, b in comment_spans)

    evidence: list[PixelEvidence] = []
    ids: set[str] = set()
    for kind, pattern in _PATTERNS:
        for m in pattern.finditer(html):
            pid = m.group("id").decode("ascii")
            if not is_valid_pixel_id(pid):
                continue
            evidence.append(PixelEvidence(
                pixel_id=pid,
                kind=kind,
                offset=m.start(),
                length=m.end() - m.start(),
                in_comment=commented(m.start()),
            ))
            ids.add(pid)
    evidence.sort(key=lambda e: (e.offset, e.kind))
    return ids, evidence


def evidence_matches(html: bytes, ev: PixelEvidence) -> bool:
    """Re-check an evidence entry against the bytes it was extracted from."""
    window = html[ev.offset:ev.offset + ev.length]
    pattern = dict(_PATTERNS)[ev.kind]
    m = pattern.match(window)
    return bool(m) and m.group("id").decode("ascii") == ev.pixel_id
