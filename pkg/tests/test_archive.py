import pytest
from datetime import timedelta

from pixeldig.archive import (
    ArchiveClient,
    ArchiveErrorPage,
    ArchiveUnavailable,
    FetchPolicy,
    HostRateLimiter,
    MalformedCdxResponse,
    SnapshotFetchFailed,
    SnapshotRecord,
    looks_like_archive_error,
    select_semiannual,
)
from pixeldig.mock_archive import Capture

from conftest import FakeClock


def make_client(archive, **policy_kwargs) -> ArchiveClient:
    policy = FetchPolicy(min_request_interval=0.0, **policy_kwargs)
    return ArchiveClient(
        cdx_url=archive.cdx_url(),
        replay_template=archive.replay_template(),
        policy=policy,
        timeout=2.0,
        sleep=lambda s: None,  # no backoff waits in tests
    )


def rec(url="https://example.com/", ts="20200101000000", status=200) -> SnapshotRecord:
    return SnapshotRecord(original_url=url, timestamp=ts, status_code=status)


class TestSnapshotRecord:
    def test_archive_url_derivation(self):
        r = rec()
        assert r.archive_url() == "https://web.archive.org/web/20200101000000/https://example.com/"

    def test_rejects_bad_timestamps(self):
        for ts in ("2020", "20200101", "19940101000000", "30000101000000", "2020010100000x"):
            with pytest.raises(ValueError):
                rec(ts=ts)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            FetchPolicy(max_cdx_retries=0)
        with pytest.raises(ValueError):
            FetchPolicy(batch_limit=0)
        with pytest.raises(ValueError):
            FetchPolicy(min_request_interval=-1)


class TestQueryCdx:
    def test_empty_index_yields_empty_list(self, mock_archive):
        client = make_client(mock_archive)
        assert client.query_cdx("https://nothing.example/", 2017) == []

    def test_returns_records_sorted_and_deduplicated(self, mock_archive):
        for ts in ("20200301000000", "20180101000000", "20190101000000"):
            mock_archive.add_capture(Capture("https://example.com/", ts, b"<html>x</html>"))
        # same timestamp+url twice in the index
        mock_archive.add_capture(Capture("https://example.com/", "20190101000000", b"<html>x</html>"))
        client = make_client(mock_archive)
        records = client.query_cdx("https://example.com/", 2017)
        assert [r.timestamp for r in records] == [
            "20180101000000", "20190101000000", "20200301000000"]

    def test_from_year_filter(self, mock_archive):
        mock_archive.add_capture(Capture("https://example.com/", "20160101000000", b"old"))
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", b"new"))
        client = make_client(mock_archive)
        records = client.query_cdx("https://example.com/", 2017)
        assert [r.timestamp for r in records] == ["20200101000000"]

    def test_prefix_match(self, mock_archive):
        mock_archive.add_capture(Capture(
            "https://connect.facebook.net/signals/config/123456789?v=1",
            "20200101000000", b"cfg"))
        mock_archive.add_capture(Capture(
            "https://connect.facebook.net/signals/other/999", "20200101000000", b"x"))
        client = make_client(mock_archive)
        records = client.query_cdx(
            "connect.facebook.net/signals/config/123456789", 2017, match_type="prefix")
        assert len(records) == 1
        assert records[0].original_url.endswith("config/123456789?v=1")

    def test_pagination_merges_all_pages(self, mock_archive):
        for i in range(23):
            mock_archive.add_capture(Capture(
                "https://example.com/", f"2020{i // 12 + 1:02d}{i % 12 + 1:02d}010203", b"x" + bytes([65 + i])))
        client = make_client(mock_archive, batch_limit=7)
        records = client.query_cdx("https://example.com/", 2017)
        assert len(records) == 23
        # four pages were needed
        cdx_requests = [p for _, p in mock_archive.request_log if p.startswith("/cdx")]
        assert len(cdx_requests) == 4

    def test_pagination_completeness_any_batch_limit(self, mock_archive):
        for i in range(10):
            mock_archive.add_capture(Capture(
                "https://example.com/", f"202001{i + 1:02d}000000", b"b%d" % i))
        for limit in (1, 2, 3, 9, 10, 50):
            client = make_client(mock_archive, batch_limit=limit)
            assert len(client.query_cdx("https://example.com/", 2017)) == 10

    def test_idempotent_against_unchanged_index(self, mock_archive):
        for i in range(5):
            mock_archive.add_capture(Capture(
                "https://example.com/", f"202001{i + 1:02d}000000", b"c%d" % i))
        client = make_client(mock_archive)
        first = client.query_cdx("https://example.com/", 2017)
        second = client.query_cdx("https://example.com/", 2017)
        assert first == second

    def test_retries_transient_then_succeeds(self, mock_archive):
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", b"x"))
        mock_archive.script_failures("/cdx", [("status", 503), ("status", 429)])
        client = make_client(mock_archive)
        records = client.query_cdx("https://example.com/", 2017)
        assert len(records) == 1

    def test_unavailable_after_budget(self, mock_archive):
        mock_archive.script_failures("/cdx", [("status", 503)] * 10)
        client = make_client(mock_archive, max_cdx_retries=3)
        with pytest.raises(ArchiveUnavailable) as exc_info:
            client.query_cdx("https://example.com/", 2017)
        assert exc_info.value.attempts == 3

    def test_permanent_failure_no_retry(self, mock_archive):
        mock_archive.script_failures("/cdx", [("status", 404)])
        client = make_client(mock_archive)
        with pytest.raises(ArchiveUnavailable) as exc_info:
            client.query_cdx("https://example.com/", 2017)
        assert exc_info.value.attempts == 1

    def test_malformed_rows_skipped_not_fatal(self, mock_archive):
        good = [["urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length"],
                ["k", "20200101000000", "https://example.com/", "text/html", "200", "D", "1"],
                ["k", "junk-timestamp", "https://example.com/", "text/html", "200", "D", "1"],
                ["k", "20200102000000", "https://example.com/", "text/html", "-", "D", "1"]]
        import json
        mock_archive.script_failures("/cdx", [("body", json.dumps(good).encode())])
        client = make_client(mock_archive)
        records = client.query_cdx("https://example.com/", 2017)
        assert [r.timestamp for r in records] == ["20200101000000"]

    def test_all_rows_malformed_is_error(self, mock_archive):
        bad = [["urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length"],
               ["k", "junk", "https://example.com/", "text/html", "200", "D", "1"]]
        import json
        mock_archive.script_failures("/cdx", [("body", json.dumps(bad).encode())])
        client = make_client(mock_archive)
        with pytest.raises(MalformedCdxResponse):
            client.query_cdx("https://example.com/", 2017)

    def test_non_json_response_is_error(self, mock_archive):
        mock_archive.script_failures("/cdx", [("body", b"<html>not cdx</html>")])
        client = make_client(mock_archive)
        with pytest.raises(MalformedCdxResponse):
            client.query_cdx("https://example.com/", 2017)

    def test_header_reordering_tolerated(self, mock_archive):
        mock_archive.cdx_header = ["statuscode", "original", "digest", "timestamp",
                                   "mimetype", "urlkey", "length"]
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", b"x"))
        client = make_client(mock_archive)
        records = client.query_cdx("https://example.com/", 2017)
        assert records[0].original_url == "https://example.com/"
        assert records[0].status_code == 200

    def test_future_from_year_rejected(self, mock_archive):
        client = make_client(mock_archive)
        with pytest.raises(ValueError):
            client.query_cdx("https://example.com/", 2999)

    def test_batch_merge_at_documented_scale(self, mock_archive):
        # two full pages of 100,000 plus a 37-row remainder
        total = 200_037
        body = b"x"
        captures = []
        for i in range(total):
            ts = (f"{2017 + i % 8}{(i // 8) % 12 + 1:02d}{(i // 96) % 28 + 1:02d}"
                  f"{(i // 2688) % 24:02d}{(i // 64512) % 60:02d}{i % 60:02d}")
            captures.append(Capture("https://big.example/", ts, body))
        mock_archive.add_captures(captures)
        client = make_client(mock_archive, batch_limit=100_000)
        records = client.query_cdx("https://big.example/", 2017)
        assert len(records) == total
        pages = [p for _, p in mock_archive.request_log if p.startswith("/cdx")]
        assert len(pages) == 3


class TestSelectSemiannual:
    def test_picks_both_anchor_neighbors(self):
        records = [rec(ts="20200103000000"), rec(ts="20200628000000")]
        assert select_semiannual(records, 2020) == records

    def test_single_record_within_one_anchor_only(self):
        # Mar 1 is 60 days from Jan 1 anchor (leap year), 122 from Jul 1
        records = [rec(ts="20200301000000")]
        got = select_semiannual(records, 2020, max_distance=timedelta(days=90))
        assert got == records
        got = select_semiannual(records, 2020, max_distance=timedelta(days=30))
        assert got == []

    def test_same_record_for_both_anchors_returned_once(self):
        records = [rec(ts="20200401000000")]
        got = select_semiannual(records, 2020)
        assert got == records

    def test_empty_when_nothing_in_range(self):
        records = [rec(ts="20180101000000")]
        assert select_semiannual(records, 2020, max_distance=timedelta(days=90)) == []

    def test_nearest_capture_wins(self):
        records = [rec(ts="20191220000000"), rec(ts="20200105000000"),
                   rec(ts="20200620000000"), rec(ts="20200711000000")]
        got = select_semiannual(records, 2020)
        assert [r.timestamp for r in got] == ["20200105000000", "20200711000000"]


class TestFetchSnapshot:
    def test_happy_path(self, mock_archive):
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000",
                                         b"<html>hello</html>"))
        client = make_client(mock_archive)
        body, final_url = client.fetch_snapshot(rec())
        assert body == b"<html>hello</html>"
        assert "20200101000000" in final_url

    def test_retries_5xx_then_succeeds(self, mock_archive):
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", b"<html>ok</html>"))
        mock_archive.script_failures("/web/", [("status", 503), ("status", 503)])
        client = make_client(mock_archive)
        body, _ = client.fetch_snapshot(rec())
        assert body == b"<html>ok</html>"
        attempts = [p for _, p in mock_archive.request_log if p.startswith("/web/")]
        assert len(attempts) == 3

    def test_exhausts_retry_budget(self, mock_archive):
        mock_archive.script_failures("/web/", [("drop",)] * 20)
        client = make_client(mock_archive, max_snapshot_retries=4)
        with pytest.raises(SnapshotFetchFailed) as exc_info:
            client.fetch_snapshot(rec())
        assert exc_info.value.attempts == 4
        attempts = [p for _, p in mock_archive.request_log if p.startswith("/web/")]
        assert len(attempts) == 4

    def test_timeouts_exhaust_retry_budget(self, mock_archive):
        mock_archive.script_failures("/web/", [("stall", 1.0)] * 10)
        client = make_client(mock_archive, max_snapshot_retries=3)
        client.timeout = 0.1
        with pytest.raises(SnapshotFetchFailed) as exc_info:
            client.fetch_snapshot(rec())
        assert exc_info.value.attempts == 3

    def test_archive_error_page_detected(self, mock_archive):
        toolbar_only = (b"<html><!-- BEGIN WAYBACK TOOLBAR INSERT -->"
                        b"<div id='wm-ipp'>toolbar</div>"
                        b"<!-- END WAYBACK TOOLBAR INSERT --></html>")
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", toolbar_only))
        client = make_client(mock_archive)
        with pytest.raises(ArchiveErrorPage):
            client.fetch_snapshot(rec())

    def test_status_marker_page_detected(self):
        assert looks_like_archive_error(b"<html><h1>Access Denied</h1></html>")
        assert looks_like_archive_error(b"<html><title>504 Gateway Timeout</title></html>")
        assert not looks_like_archive_error(b"<html><p>regular page about gateways</p></html>")

    def test_toolbar_with_real_content_not_error(self):
        body = (b"<html><!-- BEGIN WAYBACK TOOLBAR INSERT -->toolbar"
                b"<!-- END WAYBACK TOOLBAR INSERT -->" + b"<p>content</p>" * 200 + b"</html>")
        assert not looks_like_archive_error(body)


class TestRateLimiter:
    def test_consecutive_same_host_spacing(self):
        clock = FakeClock()
        limiter = HostRateLimiter(1.5, clock=clock.monotonic, sleep=clock.sleep)
        starts = [limiter.acquire("a.example") for _ in range(4)]
        gaps = [b - a for a, b in zip(starts, starts[1:])]
        assert all(gap >= 1.5 for gap in gaps)

    def test_different_hosts_not_serialized(self):
        clock = FakeClock()
        limiter = HostRateLimiter(5.0, clock=clock.monotonic, sleep=clock.sleep)
        t1 = limiter.acquire("a.example")
        t2 = limiter.acquire("b.example")
        assert t2 - t1 == 0

    def test_backoff_waits_are_capped(self):
        import random

        waits = []
        client = ArchiveClient(policy=FetchPolicy(min_request_interval=0.0),
                               sleep=waits.append, rng=random.Random(1))
        for failures in (1, 2, 5, 10, 30):
            client._backoff(failures)
        assert all(0 <= w <= 60.0 for w in waits)
        assert waits[-1] > 1.0  # jitter over a large cap, not a fixed tiny wait

    def test_limiter_serializes_across_threads(self):
        from concurrent.futures import ThreadPoolExecutor

        clock = FakeClock()
        lock = __import__("threading").Lock()

        def locked_sleep(seconds):
            with lock:
                clock.sleep(seconds)

        limiter = HostRateLimiter(1.0, clock=clock.monotonic, sleep=locked_sleep)
        with ThreadPoolExecutor(max_workers=4) as pool:
            starts = sorted(pool.map(lambda _: limiter.acquire("h.example"), range(8)))
        gaps = [b - a for a, b in zip(starts, starts[1:])]
        assert all(gap >= 1.0 for gap in gaps)

    def test_client_paces_requests_to_same_host(self, mock_archive):
        mock_archive.add_capture(Capture("https://example.com/", "20200101000000", b"x"))
        clock = FakeClock()
        client = ArchiveClient(
            cdx_url=mock_archive.cdx_url(),
            replay_template=mock_archive.replay_template(),
            policy=FetchPolicy(min_request_interval=2.0),
            timeout=2.0,
            clock=clock.monotonic,
            sleep=clock.sleep,
        )
        client.query_cdx("https://example.com/", 2017)
        client.query_cdx("https://example.com/", 2017)
        host = f"127.0.0.1:{mock_archive.port}"
        assert clock.sleeps, "second request should have waited"
        assert client.limiter._last_start[host] - 1000.0 >= 2.0
