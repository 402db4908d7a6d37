"""Append-only measurement store.

Raw bodies live in a content-addressed blob directory; everything derived
(capture records, per-site-year observations, parses, crack results) is
appended to line-delimited JSON index files. The attribution rule that ties
config captures to site-years also lives here.

Index file schemas are documented field-by-field in the README.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .archive import SnapshotRecord, parse_archive_timestamp

BLOB_KINDS = ("html_snapshot", "config_script")


class StorageIo(Exception):
    """A blob or index write failed at the filesystem level."""


def content_hash(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


@dataclass(frozen=True)
class StoredBlob:
    content_hash: str
    kind: str
    source_record: SnapshotRecord
    body: bytes

    def verify(self) -> bool:
        return content_hash(self.body) == self.content_hash


@dataclass
class SiteYearObservation:
    """What one website looked like in one study year: the Pixel IDs its
    HTML carried, and the config captures attributed to that year."""

    domain: str
    cohort: str
    year: int
    pixel_ids: set[str] = field(default_factory=set)
    config_refs: set[tuple[str, str]] = field(default_factory=set)  # (pixel_id, content hash)

    def check_attribution(self) -> bool:
        return all(pid in self.pixel_ids for pid, _ in self.config_refs)

    def to_json(self) -> dict:
        return {
            "domain": self.domain,
            "cohort": self.cohort,
            "year": self.year,
            "pixel_ids": sorted(self.pixel_ids),
            "config_refs": sorted([list(ref) for ref in self.config_refs]),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SiteYearObservation":
        return cls(
            domain=obj["domain"],
            cohort=obj["cohort"],
            year=int(obj["year"]),
            pixel_ids=set(obj.get("pixel_ids", [])),
            config_refs={(p, h) for p, h in obj.get("config_refs", [])},
        )


@dataclass(frozen=True)
class ConfigCapture:
    """One archived configuration script for one Pixel ID."""

    pixel_id: str
    timestamp: str
    content_hash: str

    @property
    def year(self) -> int:
        return int(self.timestamp[:4])


class SnapshotStore:
    """Filesystem-backed store rooted at `root`.

    Writers to a given index file are serialized by an in-process lock;
    readers see a prefix of appended lines.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.index_dir = self.root / "index"
        try:
            self.blob_dir.mkdir(parents=True, exist_ok=True)
            self.index_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageIo(f"cannot create store at {self.root}: {exc}") from exc
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._blob_index_keys: Optional[set[str]] = None

    def _lock_for(self, name: str) -> threading.Lock:
        with self._locks_guard:
            if name not in self._locks:
                self._locks[name] = threading.Lock()
            return self._locks[name]

    # -- blobs ---------------------------------------------------------------

    def _blob_path(self, digest: str) -> Path:
        return self.blob_dir / digest[:2] / digest

    def put_blob(self, kind: str, record: SnapshotRecord, body: bytes) -> str:
        """Store `body` once per content hash and index the capture; returns
        the hash. Re-putting identical content is a no-op."""
        if kind not in BLOB_KINDS:
            raise ValueError(f"unknown blob kind {kind!r}")
        if not body:
            raise ValueError("refusing to store an empty body")
        digest = content_hash(body)
        path = self._blob_path(digest)
        if not path.exists():
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(body)
                tmp.replace(path)
            except OSError as exc:
                raise StorageIo(f"cannot write blob {digest}: {exc}") from exc
        row_key = f"{kind}|{record.original_url}|{record.timestamp}|{digest}"
        with self._lock_for("blobs.jsonl"):
            if self._blob_index_keys is None:
                self._blob_index_keys = {
                    f"{r['kind']}|{r['original_url']}|{r['timestamp']}|{r['content_hash']}"
                    for r in self.read_index("blobs")
                }
            if row_key not in self._blob_index_keys:
                self._append_locked("blobs", {
                    "content_hash": digest,
                    "kind": kind,
                    "original_url": record.original_url,
                    "timestamp": record.timestamp,
                    "iso_timestamp": parse_archive_timestamp(record.timestamp).isoformat(),
                    "status_code": record.status_code,
                    "mime": record.mime,
                    "cdx_digest": record.digest,
                    "size": len(body),
                })
                self._blob_index_keys.add(row_key)
        return digest

    def get_blob(self, digest: str) -> bytes:
        path = self._blob_path(digest)
        try:
            return path.read_bytes()
        except OSError as exc:
            raise StorageIo(f"cannot read blob {digest}: {exc}") from exc

    def has_blob(self, digest: str) -> bool:
        return self._blob_path(digest).exists()

    def has_capture(self, kind: str, record: SnapshotRecord) -> bool:
        """True when a body for this (kind, url, timestamp) is already indexed."""
        prefix = f"{kind}|{record.original_url}|{record.timestamp}|"
        with self._lock_for("blobs.jsonl"):
            if self._blob_index_keys is None:
                self._blob_index_keys = {
                    f"{r['kind']}|{r['original_url']}|{r['timestamp']}|{r['content_hash']}"
                    for r in self.read_index("blobs")
                }
            return any(k.startswith(prefix) for k in self._blob_index_keys)

    # -- line-delimited indexes ------------------------------------------------

    def _index_path(self, name: str) -> Path:
        return self.index_dir / f"{name}.jsonl"

    def append_index(self, name: str, obj: dict) -> None:
        with self._lock_for(f"{name}.jsonl"):
            self._append_locked(name, obj)

    def _append_locked(self, name: str, obj: dict) -> None:
        line = json.dumps(obj, sort_keys=True, ensure_ascii=False)
        try:
            with open(self._index_path(name), "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise StorageIo(f"cannot append to index {name}: {exc}") from exc

    def read_index(self, name: str) -> Iterator[dict]:
        path = self._index_path(name)
        if not path.exists():
            return iter(())

        def _rows():
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        yield json.loads(line)

        return _rows()

    def replace_index(self, name: str, rows: Iterable[dict]) -> None:
        """Atomically rewrite a derived index (used by recomputed stages)."""
        path = self._index_path(name)
        tmp = path.with_suffix(".tmp")
        with self._lock_for(f"{name}.jsonl"):
            try:
                with open(tmp, "w", encoding="utf-8") as fh:
                    for obj in rows:
                        fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
                tmp.replace(path)
            except OSError as exc:
                raise StorageIo(f"cannot rewrite index {name}: {exc}") from exc

    def has_index(self, name: str) -> bool:
        return self._index_path(name).exists()


def attribute_configs(
    observations: Iterable[SiteYearObservation],
    configs: Iterable[ConfigCapture],
) -> tuple[list[SiteYearObservation], list[ConfigCapture]]:
    """Attach config captures to site-years by the Pixel-ID/year rule.

    A capture with timestamp in year Y for Pixel P is attached to every site
    whose year-Y observation saw P in its HTML. Captures that match no
    site-year are returned separately for diagnostics.
    """
    obs_list = [
        SiteYearObservation(o.domain, o.cohort, o.year, set(o.pixel_ids), set(o.config_refs))
        for o in observations
    ]
    by_year_pixel: dict[tuple[int, str], list[SiteYearObservation]] = {}
    for obs in obs_list:
        for pid in obs.pixel_ids:
            by_year_pixel.setdefault((obs.year, pid), []).append(obs)

    unattributed: list[ConfigCapture] = []
    for cap in configs:
        targets = by_year_pixel.get((cap.year, cap.pixel_id))
        if not targets:
            unattributed.append(cap)
            continue
        for obs in targets:
            obs.config_refs.add((cap.pixel_id, cap.content_hash))
    return obs_list, unattributed
