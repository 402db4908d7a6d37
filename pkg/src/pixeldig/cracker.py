"""Dictionary attack on SHA-256-hashed sensitive parameter names.

The hash database is modeled as local wordlist files (one candidate per
line, UTF-8) so builds stay hermetic; plaintext keys observed in the wild
are folded in as an extra source, and a small variant generator covers
casing and separator conventions common in parameter names. Hash input is
the UTF-8 bytes of the exact key string, no trailing newline.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

# Fragments frequently glued onto parameter names in the wild.
VARIANT_PREFIXES = ("txt", "str")
VARIANT_SUFFIXES = ("Id", "id", "str", "txt")

# Candidate provenance, in priority order when several sources collide.
SOURCES = ("wordlist", "observed_blacklisted", "variant")


class EmptyDictionary(Exception):
    """No candidates could be loaded from any source."""


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CrackResult:
    digest: str
    plaintext: Optional[str]
    source: Optional[str] = None

    @property
    def cracked(self) -> bool:
        return self.plaintext is not None

    def verify(self) -> bool:
        return self.plaintext is None or sha256_hex(self.plaintext) == self.digest

    def to_json(self) -> dict:
        return {"digest": self.digest, "plaintext": self.plaintext, "source": self.source}


def split_words(name: str) -> list[str]:
    """Tokenize a parameter name on camelCase humps, underscores, hyphens."""
    pieces = re.split(r"[_\-\s]+", name)
    words: list[str] = []
    for piece in pieces:
        if not piece:
            continue
        words.extend(w for w in re.findall(
            r"[A-Z]+(?![a-z])|[A-Z][a-z0-9]*|[a-z0-9]+", piece) if w)
    return words


def generate_variants(entry: str) -> set[str]:
    """Spellings of `entry` under common parameter-name conventions, plus
    prefixed/suffixed forms. Does not include `entry` itself."""
    words = split_words(entry)
    lower = [w.lower() for w in words]
    forms: set[str] = set()
    if lower:
        forms.add("".join(lower))                      # searchterm
        forms.add("_".join(lower))                     # search_term
        forms.add("-".join(lower))                     # search-term
        forms.add(lower[0] + "".join(w.title() for w in lower[1:]))  # searchTerm
    forms.add(entry.lower())
    base_forms = set(forms) | {entry}
    for base in base_forms:
        for suffix in VARIANT_SUFFIXES:
            forms.add(base + suffix)
        for prefix in VARIANT_PREFIXES:
            forms.add(prefix + base)
            if base:
                forms.add(prefix + base[0].upper() + base[1:])
    forms.discard(entry)
    return forms


class Dictionary:
    """Precomputed digest index over candidates from all sources."""

    def __init__(self):
        self._by_digest: dict[str, tuple[str, str]] = {}  # digest -> (plaintext, source)
        self.candidate_count = 0

    def _add(self, plaintext: str, source: str) -> None:
        digest = sha256_hex(plaintext)
        existing = self._by_digest.get(digest)
        if existing is None or SOURCES.index(source) < SOURCES.index(existing[1]):
            self._by_digest[digest] = (plaintext, source)
            if existing is None:
                self.candidate_count += 1

    def add_entry(self, entry: str, source: str, with_variants: bool = True) -> None:
        self._add(entry, source)
        if with_variants:
            for variant in generate_variants(entry):
                self._add(variant, "variant")

    def lookup(self, digest: str) -> Optional[tuple[str, str]]:
        return self._by_digest.get(digest)

    def __len__(self) -> int:
        return self.candidate_count


def build_dictionary(wordlists: Iterable[Path | str] = (),
                     observed_keys: Iterable[str] = (),
                     with_variants: bool = True) -> Dictionary:
    """Assemble the candidate index from wordlist files and observed
    plaintext keys. Raises EmptyDictionary when nothing loads."""
    dictionary = Dictionary()
    for path in wordlists:
        text = Path(path).read_text(encoding="utf-8")
        for line in text.splitlines():
            entry = line.strip()
            if entry and not entry.startswith("#"):
                dictionary.add_entry(entry, "wordlist", with_variants)
    for key in observed_keys:
        key = key.strip()
        if key:
            dictionary.add_entry(key, "observed_blacklisted", with_variants)
    if len(dictionary) == 0:
        raise EmptyDictionary("no candidates loaded from wordlists or observed keys")
    return dictionary


def crack(digests: Iterable[str], dictionary: Dictionary) -> tuple[list[CrackResult], float]:
    """Match digests against the index. Returns per-digest results (sorted by
    digest) and the reversal rate cracked/total."""
    unique = sorted(set(digests))
    results: list[CrackResult] = []
    hits = 0
    for digest in unique:
        if not _HEX64.match(digest):
            raise ValueError(f"not a 64-hex digest: {digest!r}")
        found = dictionary.lookup(digest)
        if found is None:
            results.append(CrackResult(digest=digest, plaintext=None))
        else:
            plaintext, source = found
            results.append(CrackResult(digest=digest, plaintext=plaintext, source=source))
            hits += 1
    rate = hits / len(unique) if unique else 0.0
    return results, rate
