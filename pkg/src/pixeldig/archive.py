"""Web-archive (CDX index + replay) client.

Queries the CDX index for capture records, picks the semiannual snapshots
closest to the January 1 / July 1 anchors of a year, and fetches archived
bodies with retry, exponential backoff, and per-host rate limiting. All
endpoints are configurable so the suite can run against a local mock server.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable, Optional
from urllib.parse import urlsplit

import requests

logger = logging.getLogger(__name__)

DEFAULT_CDX_URL = "https://web.archive.org/cdx/search/cdx"
DEFAULT_REPLAY_TEMPLATE = "https://web.archive.org/web/{timestamp}/{url}"

# Retry spacing: exponential with full jitter, capped.
BACKOFF_BASE_SECONDS = 0.5
BACKOFF_CAP_SECONDS = 60.0

_EARLIEST_CAPTURE = datetime(1996, 1, 1, tzinfo=timezone.utc)


class ArchiveError(Exception):
    """Base class for archive client failures."""


class ArchiveUnavailable(ArchiveError):
    """CDX index could not be reached after the configured attempts."""

    def __init__(self, msg: str, attempts: int):
        super().__init__(f"{msg} (after {attempts} attempts)")
        self.attempts = attempts


class MalformedCdxResponse(ArchiveError):
    """CDX response could not be interpreted as index rows."""


class SnapshotFetchFailed(ArchiveError):
    """Replay fetch exhausted its retry budget or hit a permanent error."""

    def __init__(self, msg: str, attempts: int):
        super().__init__(f"{msg} (after {attempts} attempts)")
        self.attempts = attempts


class ArchiveErrorPage(ArchiveError):
    """The replay body is an archive error wrapper, not real page content."""


def parse_archive_timestamp(ts: str) -> datetime:
    """Parse a 14-digit capture timestamp into an aware UTC datetime.

    Raises ValueError for anything that is not a plausible capture time
    (malformed digits, or outside 1996..now).
    """
    if not (isinstance(ts, str) and len(ts) == 14 and ts.isdigit()):
        raise ValueError(f"not a 14-digit timestamp: {ts!r}")
    dt = datetime.strptime(ts, "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)
    if dt < _EARLIEST_CAPTURE or dt > datetime.now(timezone.utc) + timedelta(days=1):
        raise ValueError(f"capture time out of range: {ts}")
    return dt


@dataclass(frozen=True)
class SnapshotRecord:
    """One CDX index row: a single archived capture of a URL."""

    original_url: str
    timestamp: str
    status_code: int
    digest: str = ""
    mime: str = ""

    def __post_init__(self):
        parse_archive_timestamp(self.timestamp)

    @property
    def capture_time(self) -> datetime:
        return parse_archive_timestamp(self.timestamp)

    @property
    def year(self) -> int:
        return int(self.timestamp[:4])

    def archive_url(self, template: str = DEFAULT_REPLAY_TEMPLATE) -> str:
        return template.format(timestamp=self.timestamp, url=self.original_url)


@dataclass(frozen=True)
class FetchPolicy:
    """Retry and pacing budget for archive access.

    Counts are total attempt budgets (first try included).
    """

    max_cdx_retries: int = 5
    max_snapshot_retries: int = 10
    batch_limit: int = 100_000
    min_request_interval: float = 1.0

    def __post_init__(self):
        if self.max_cdx_retries < 1 or self.max_snapshot_retries < 1:
            raise ValueError("retry budgets must be >= 1")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")
        if self.min_request_interval < 0:
            raise ValueError("min_request_interval must be >= 0")


class HostRateLimiter:
    """Serializes request pacing per host: consecutive request starts to the
    same host are at least `interval` apart. Thread-safe."""

    def __init__(self, interval: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._last_start: dict[str, float] = {}

    def acquire(self, host: str) -> float:
        """Block until a request to `host` may start; returns the start time."""
        while True:
            with self._lock:
                now = self._clock()
                last = self._last_start.get(host)
                if last is None or now - last >= self.interval:
                    self._last_start[host] = now
                    return now
                wait = last + self.interval - now
            self._sleep(wait)


def _is_transient_status(status: int) -> bool:
    # 429 and 5xx are worth retrying; other 4xx means the content is simply
    # not there and hammering the archive will not change that.
    return status == 429 or status >= 500


def looks_like_archive_error(body: bytes) -> bool:
    """Heuristic for replay bodies that are archive error wrappers.

    Two shapes observed in missed captures: status pages served through the
    replay endpoint, and a toolbar-only wrapper where the page itself never
    loaded into the content frame.
    """
    head = body[:16384]
    try:
        text = head.decode("utf-8", errors="replace")
    except Exception:  # pragma: no cover - decode with replace cannot fail
        return False
    lowered = text.lower()
    for marker in ("access denied", "504 gateway timeout", "503 service unavailable"):
        if marker in lowered:
            return True
    if "wayback toolbar insert" in lowered or 'id="wm-ipp' in lowered:
        stripped = _strip_toolbar(body).strip()
        if len(stripped) < 512:
            return True
    return False


def _strip_toolbar(body: bytes) -> bytes:
    text = body.decode("utf-8", errors="replace")
    start = text.find("BEGIN WAYBACK TOOLBAR INSERT")
    end = text.find("END WAYBACK TOOLBAR INSERT")
    if start != -1 and end != -1 and end > start:
        text = text[:start] + text[end + len("END WAYBACK TOOLBAR INSERT"):]
    return text.encode("utf-8")


class ArchiveClient:
    """Client for one archive deployment (index endpoint + replay endpoint).

    Safe for concurrent use across targets; the per-host rate limiter is the
    only shared state.
    """

    def __init__(self, cdx_url: str = DEFAULT_CDX_URL,
                 replay_template: str = DEFAULT_REPLAY_TEMPLATE,
                 policy: FetchPolicy = FetchPolicy(),
                 timeout: float = 60.0,
                 session: Optional[requests.Session] = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep,
                 rng: Optional[random.Random] = None):
        self.cdx_url = cdx_url
        self.replay_template = replay_template
        self.policy = policy
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.limiter = HostRateLimiter(policy.min_request_interval, clock=clock, sleep=sleep)

    # -- CDX index ---------------------------------------------------------

    def query_cdx(self, target: str, from_year: int,
                  match_type: str = "exact") -> list[SnapshotRecord]:
        """Fetch all index records for `target` from `from_year` onward.

        Pages through the index `batch_limit` rows at a time via resume keys,
        deduplicates by (timestamp, original_url), and returns records in
        timestamp order. Rows that cannot be parsed are skipped and counted;
        the query only fails if every row was unparseable.
        """
        if from_year > datetime.now(timezone.utc).year:
            raise ValueError(f"from_year {from_year} is in the future")
        params = {
            "url": target,
            "from": str(from_year),
            "output": "json",
            "limit": str(self.policy.batch_limit),
            "showResumeKey": "true",
        }
        if match_type != "exact":
            params["matchType"] = match_type

        seen: set[tuple[str, str]] = set()
        records: list[SnapshotRecord] = []
        rows_seen = 0
        malformed = 0
        resume_key: Optional[str] = None
        while True:
            page_params = dict(params)
            if resume_key is not None:
                page_params["resumeKey"] = resume_key
            body = self._request_with_retries(
                self.cdx_url, page_params, self.policy.max_cdx_retries, kind="CDX")
            rows, resume_key = _parse_cdx_page(body)
            header = None
            for row in rows:
                if header is None:
                    header = _header_index(row)
                    continue
                rows_seen += 1
                rec = _row_to_record(row, header)
                if rec is None:
                    malformed += 1
                    continue
                key = (rec.timestamp, rec.original_url)
                if key not in seen:
                    seen.add(key)
                    records.append(rec)
            if resume_key is None:
                break
        if rows_seen > 0 and malformed == rows_seen:
            raise MalformedCdxResponse(
                f"all {rows_seen} CDX rows for {target} were unparseable")
        if malformed:
            logger.warning("skipped %d unparseable CDX rows for %s", malformed, target)
        records.sort(key=lambda r: (r.timestamp, r.original_url))
        return records

    # -- snapshot replay ----------------------------------------------------

    def fetch_snapshot(self, record: SnapshotRecord) -> tuple[bytes, str]:
        """Fetch the replay body for a capture; returns (body, final URL)."""
        url = record.archive_url(self.replay_template)
        body, final_url = self._get_with_retries(url, self.policy.max_snapshot_retries)
        if looks_like_archive_error(body):
            raise ArchiveErrorPage(f"archive error wrapper at {url}")
        return body, final_url

    # -- transport ----------------------------------------------------------

    def _request_with_retries(self, url: str, params: dict, budget: int,
                              kind: str) -> str:
        host = urlsplit(url).netloc
        last_error: Optional[str] = None
        for attempt in range(1, budget + 1):
            if attempt > 1:
                self._backoff(attempt - 1)
            self.limiter.acquire(host)
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.debug("%s attempt %d failed: %s", kind, attempt, last_error)
                continue
            if resp.status_code == 200:
                return resp.text
            last_error = f"HTTP {resp.status_code}"
            if not _is_transient_status(resp.status_code):
                raise ArchiveUnavailable(
                    f"{kind} request to {url} failed permanently: {last_error}",
                    attempts=attempt)
        raise ArchiveUnavailable(
            f"{kind} request to {url} failed: {last_error}", attempts=budget)

    def _get_with_retries(self, url: str, budget: int) -> tuple[bytes, str]:
        host = urlsplit(url).netloc
        last_error: Optional[str] = None
        for attempt in range(1, budget + 1):
            if attempt > 1:
                self._backoff(attempt - 1)
            self.limiter.acquire(host)
            try:
                resp = self.session.get(url, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.debug("snapshot attempt %d failed: %s", attempt, last_error)
                continue
            if resp.status_code == 200:
                return resp.content, resp.url
            last_error = f"HTTP {resp.status_code}"
            if not _is_transient_status(resp.status_code):
                raise SnapshotFetchFailed(
                    f"permanent failure fetching {url}: {last_error}",
                    attempts=attempt)
        raise SnapshotFetchFailed(f"could not fetch {url}: {last_error}", attempts=budget)

    def _backoff(self, failures: int) -> None:
        cap = min(BACKOFF_CAP_SECONDS, BACKOFF_BASE_SECONDS * (2 ** failures))
        self._sleep(self._rng.uniform(0, cap))


def _parse_cdx_page(body: str) -> tuple[list[list], Optional[str]]:
    """Split one CDX JSON page into rows and an optional resume key.

    The index appends an empty row followed by a single-element resume-key
    row when more pages remain.
    """
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedCdxResponse(f"CDX response is not JSON: {exc}") from exc
    if data == []:
        return [], None
    if not isinstance(data, list) or not all(isinstance(r, list) for r in data):
        raise MalformedCdxResponse("CDX response is not a list of rows")
    resume_key = None
    if len(data) >= 2 and data[-2] == [] and len(data[-1]) == 1:
        resume_key = str(data[-1][0])
        data = data[:-2]
    return data, resume_key


def _header_index(header_row: list) -> dict[str, int]:
    return {str(name): i for i, name in enumerate(header_row)}


def _row_to_record(row: list, header: dict[str, int]) -> Optional[SnapshotRecord]:
    """Positional row parse driven by the header; None when the row is junk."""
    def col(name: str) -> Optional[str]:
        idx = header.get(name)
        if idx is None or idx >= len(row):
            return None
        return str(row[idx])

    original = col("original")
    timestamp = col("timestamp")
    status = col("statuscode")
    if not original or not timestamp or status is None:
        return None
    try:
        return SnapshotRecord(
            original_url=original,
            timestamp=timestamp,
            status_code=int(status),
            digest=col("digest") or "",
            mime=col("mimetype") or "",
        )
    except (ValueError, TypeError):
        return None


def select_semiannual(records: Iterable[SnapshotRecord], year: int,
                      max_distance: timedelta = timedelta(days=183)) -> list[SnapshotRecord]:
    """Pick the captures closest to Jan 1 and Jul 1 of `year`.

    Each anchor contributes its nearest record only if within `max_distance`;
    when both anchors land on the same record it is returned once. Input is
    assumed timestamp-sorted; output preserves timestamp order.
    """
    recs = list(records)
    anchors = [
        datetime(year, 1, 1, tzinfo=timezone.utc),
        datetime(year, 7, 1, tzinfo=timezone.utc),
    ]
    chosen: list[SnapshotRecord] = []
    for anchor in anchors:
        best: Optional[SnapshotRecord] = None
        best_dist: Optional[timedelta] = None
        for rec in recs:
            dist = abs(rec.capture_time - anchor)
            if best_dist is None or dist < best_dist:
                best, best_dist = rec, dist
        if best is not None and best_dist is not None and best_dist <= max_distance:
            if best not in chosen:
                chosen.append(best)
    chosen.sort(key=lambda r: r.timestamp)
    return chosen
