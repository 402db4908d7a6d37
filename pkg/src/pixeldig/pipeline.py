"""Resumable end-to-end pipeline.

Stage order mirrors the measurement flow: crawl landing-page snapshots,
extract Pixel IDs, crawl the per-Pixel configuration scripts, parse them,
crack hashed sensitive keys, compute adoption statistics, write reports.
Each stage is idempotent: work already in the store is skipped, derived
indexes are rewritten atomically, and reports are byte-stable for an
unchanged store.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .archive import (
    ArchiveClient,
    ArchiveError,
    ArchiveErrorPage,
    FetchPolicy,
    SnapshotRecord,
    select_semiannual,
)
from .configscript import (
    FEATURE_NAMES,
    NoRegisterPluginRegion,
    config_feature_vector,
    parse_config_script,
)
from .cracker import EmptyDictionary, build_dictionary, crack
from .pixels import extract_pixel_ids, strip_archive_rewrites
from .stats import SiteYearFeatures, adoption_stats, key_overlap_cdf, stable_cohort
from .store import ConfigCapture, SiteYearObservation, SnapshotStore, attribute_configs

logger = logging.getLogger(__name__)

STAGES = (
    "crawl_sites",
    "extract_pixels",
    "crawl_configs",
    "parse_configs",
    "crack_keys",
    "analyze",
    "report",
)

DEFAULT_YEARS = list(range(2017, 2025))

CONFIG_SCRIPT_PREFIX = "connect.facebook.net/signals/config/"


class MissingPrerequisite(Exception):
    """A stage was started before the stage it depends on produced output."""

    def __init__(self, stage: str, missing: str):
        super().__init__(f"stage {stage!r} requires output of stage {missing!r}")
        self.stage = stage
        self.missing = missing


@dataclass
class PipelineConfig:
    cohorts: dict[str, Path]
    storage_root: Path
    output_dir: Path
    years: list[int] = field(default_factory=lambda: list(DEFAULT_YEARS))
    cdx_url: str = "https://web.archive.org/cdx/search/cdx"
    replay_template: str = "https://web.archive.org/web/{timestamp}/{url}"
    wordlists: list[Path] = field(default_factory=list)
    policy: FetchPolicy = field(default_factory=FetchPolicy)
    stable_min_years: int = 4
    jobs: int = 1

    def __post_init__(self):
        if not self.years:
            raise ValueError("study year range is empty")
        if not self.cohorts:
            raise ValueError("at least one cohort site list is required")

    @classmethod
    def from_file(cls, path: Path | str) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_json(raw, base_dir=Path(path).resolve().parent)

    @classmethod
    def from_json(cls, raw: dict, base_dir: Optional[Path] = None) -> "PipelineConfig":
        base = base_dir or Path.cwd()

        def _path(value: str) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base / p

        policy_raw = raw.get("fetch_policy", {})
        policy = FetchPolicy(
            max_cdx_retries=int(policy_raw.get("max_cdx_retries", 5)),
            max_snapshot_retries=int(policy_raw.get("max_snapshot_retries", 10)),
            batch_limit=int(policy_raw.get("batch_limit", 100_000)),
            min_request_interval=float(policy_raw.get("min_request_interval", 1.0)),
        )
        cdx_url = os.environ.get("PIXELDIG_CDX_URL") or raw.get(
            "cdx_url", cls.cdx_url)
        replay = os.environ.get("PIXELDIG_REPLAY_TEMPLATE") or raw.get(
            "replay_template", cls.replay_template)
        return cls(
            cohorts={name: _path(p) for name, p in raw["cohorts"].items()},
            storage_root=_path(raw["storage_root"]),
            output_dir=_path(raw["output_dir"]),
            years=[int(y) for y in raw.get("years", DEFAULT_YEARS)],
            cdx_url=cdx_url,
            replay_template=replay,
            wordlists=[_path(p) for p in raw.get("wordlists", [])],
            policy=policy,
            stable_min_years=int(raw.get("stable_min_years", 4)),
            jobs=int(raw.get("jobs", 1)),
        )


@dataclass
class StageSummary:
    stage: str
    counts: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"stage": self.stage, "counts": dict(sorted(self.counts.items())),
                "notes": list(self.notes)}


def normalize_domain(raw: str) -> str:
    d = raw.strip().lower()
    for scheme in ("https://", "http://"):
        if d.startswith(scheme):
            d = d[len(scheme):]
    return d.rstrip("/")


def load_site_lists(cfg: PipelineConfig) -> tuple[list[tuple[str, str]], list[str]]:
    """Read per-cohort site lists; a domain in several cohorts is assigned to
    each of them and reported as an overlap."""
    membership: list[tuple[str, str]] = []
    seen: dict[str, list[str]] = {}
    for cohort in sorted(cfg.cohorts):
        path = cfg.cohorts[cohort]
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            domain = normalize_domain(line)
            if not domain or domain.startswith("#"):
                continue
            if (domain, cohort) not in membership:
                membership.append((domain, cohort))
                seen.setdefault(domain, []).append(cohort)
    overlaps = sorted(d for d, cohorts in seen.items() if len(cohorts) > 1)
    if overlaps:
        logger.warning("%d domains belong to multiple cohorts: %s",
                       len(overlaps), ", ".join(overlaps[:10]))
    return membership, overlaps


def run_stage(stage: str, cfg: PipelineConfig,
              client: Optional[ArchiveClient] = None) -> StageSummary:
    """Run one pipeline stage; raises MissingPrerequisite when its inputs
    are not in the store yet."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; stages are {STAGES}")
    store = SnapshotStore(cfg.storage_root)
    if stage in ("crawl_sites", "crawl_configs") and client is None:
        client = ArchiveClient(cdx_url=cfg.cdx_url, replay_template=cfg.replay_template,
                               policy=cfg.policy)
    runner = {
        "crawl_sites": _stage_crawl_sites,
        "extract_pixels": _stage_extract_pixels,
        "crawl_configs": _stage_crawl_configs,
        "parse_configs": _stage_parse_configs,
        "crack_keys": _stage_crack_keys,
        "analyze": _stage_analyze,
        "report": _stage_report,
    }[stage]
    if stage in ("crawl_sites", "crawl_configs"):
        return runner(cfg, store, client)
    return runner(cfg, store)


def run_all(cfg: PipelineConfig,
            client: Optional[ArchiveClient] = None) -> list[StageSummary]:
    return [run_stage(stage, cfg, client=client) for stage in STAGES]


def _require(store: SnapshotStore, index: str, stage: str, producer: str) -> None:
    if not store.has_index(index):
        raise MissingPrerequisite(stage, producer)


# -- crawl_sites ------------------------------------------------------------------


def _stage_crawl_sites(cfg: PipelineConfig, store: SnapshotStore,
                       client: ArchiveClient) -> StageSummary:
    summary = StageSummary("crawl_sites")
    membership, overlaps = load_site_lists(cfg)
    summary.counts["sites"] = len({d for d, _ in membership})
    summary.counts["cohort_overlaps"] = len(overlaps)
    existing = {
        (r["domain"], r["cohort"], r["year"], r["timestamp"])
        for r in store.read_index("site_snapshots")
    }
    from_year = min(cfg.years) - 1  # anchor neighbors may sit in the prior year

    def crawl_one(item: tuple[str, str]) -> dict[str, int]:
        domain, cohort = item
        counts = {"selected": 0, "fetched": 0, "failed": 0, "skipped": 0}
        try:
            records = client.query_cdx(f"https://{domain}/", from_year)
        except ArchiveError as exc:
            logger.warning("CDX query failed for %s: %s", domain, exc)
            counts["failed"] += 1
            return counts
        # error captures (missed pages, blocks) must not win an anchor
        records = [r for r in records if r.status_code < 400]
        for year in cfg.years:
            for rec in select_semiannual(records, year):
                counts["selected"] += 1
                row_key = (domain, cohort, year, rec.timestamp)
                if store.has_capture("html_snapshot", rec):
                    counts["skipped"] += 1
                    if row_key not in existing:
                        _append_site_snapshot(store, domain, cohort, year, rec, None)
                        existing.add(row_key)
                    continue
                try:
                    body, _ = client.fetch_snapshot(rec)
                except (ArchiveError, ArchiveErrorPage) as exc:
                    logger.warning("snapshot fetch failed for %s @%s: %s",
                                   domain, rec.timestamp, exc)
                    counts["failed"] += 1
                    continue
                digest = store.put_blob("html_snapshot", rec, body)
                _append_site_snapshot(store, domain, cohort, year, rec, digest)
                existing.add(row_key)
                counts["fetched"] += 1
        return counts

    results = _map_jobs(crawl_one, membership, cfg.jobs)
    for counts in results:
        for key, value in counts.items():
            summary.counts[key] = summary.counts.get(key, 0) + value
    if not store.has_index("site_snapshots"):
        store.replace_index("site_snapshots", [])
    return summary


def _append_site_snapshot(store: SnapshotStore, domain: str, cohort: str, year: int,
                          rec: SnapshotRecord, digest: Optional[str]) -> None:
    if digest is None:
        digest = _find_blob_hash(store, "html_snapshot", rec)
        if digest is None:
            return
    store.append_index("site_snapshots", {
        "domain": domain,
        "cohort": cohort,
        "year": year,
        "timestamp": rec.timestamp,
        "iso_timestamp": rec.capture_time.isoformat(),
        "original_url": rec.original_url,
        "content_hash": digest,
    })


def _find_blob_hash(store: SnapshotStore, kind: str, rec: SnapshotRecord) -> Optional[str]:
    for row in store.read_index("blobs"):
        if (row["kind"] == kind and row["original_url"] == rec.original_url
                and row["timestamp"] == rec.timestamp):
            return row["content_hash"]
    return None


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- extract_pixels -----------------------------------------------------------------


def _stage_extract_pixels(cfg: PipelineConfig, store: SnapshotStore) -> StageSummary:
    _require(store, "site_snapshots", "extract_pixels", "crawl_sites")
    summary = StageSummary("extract_pixels")
    per_site_year: dict[tuple[str, str, int], dict[str, set[str]]] = {}
    rows = 0
    for row in store.read_index("site_snapshots"):
        rows += 1
        key = (row["domain"], row["cohort"], row["year"])
        bucket = per_site_year.setdefault(key, {"live": set(), "commented": set()})
        body = store.get_blob(row["content_hash"])
        stripped = strip_archive_rewrites(body)
        ids, evidence = extract_pixel_ids(stripped)
        live = {e.pixel_id for e in evidence if not e.in_comment}
        bucket["live"] |= live
        bucket["commented"] |= ids - live

    out_rows = []
    for (domain, cohort, year), bucket in sorted(per_site_year.items()):
        out_rows.append({
            "domain": domain,
            "cohort": cohort,
            "year": year,
            "pixel_ids": sorted(bucket["live"]),
            "commented_pixel_ids": sorted(bucket["commented"] - bucket["live"]),
        })
    store.replace_index("observations", out_rows)
    summary.counts["snapshots_scanned"] = rows
    summary.counts["site_years"] = len(out_rows)
    summary.counts["site_years_with_pixels"] = sum(1 for r in out_rows if r["pixel_ids"])
    summary.counts["distinct_pixels"] = len(
        {pid for r in out_rows for pid in r["pixel_ids"]})
    return summary


# -- crawl_configs -------------------------------------------------------------------


def pixel_id_from_config_url(url: str) -> Optional[str]:
    """Pixel ID addressed by a configuration-script URL, if any."""
    idx = url.find("/signals/config/")
    if idx == -1:
        return None
    tail = url[idx + len("/signals/config/"):]
    pid = tail.split("?", 1)[0].split("/", 1)[0]
    return pid if pid.isdigit() else None


def _stage_crawl_configs(cfg: PipelineConfig, store: SnapshotStore,
                         client: ArchiveClient) -> StageSummary:
    _require(store, "observations", "crawl_configs", "extract_pixels")
    summary = StageSummary("crawl_configs")
    pixel_ids = sorted({
        pid for row in store.read_index("observations") for pid in row["pixel_ids"]
    })
    summary.counts["pixels"] = len(pixel_ids)
    existing = {
        (r["pixel_id"], r["timestamp"])
        for r in store.read_index("config_captures")
    }
    from_year = min(cfg.years)

    def crawl_one(pid: str) -> dict[str, int]:
        counts = {"selected": 0, "fetched": 0, "failed": 0, "skipped": 0}
        try:
            records = client.query_cdx(CONFIG_SCRIPT_PREFIX + pid, from_year,
                                       match_type="prefix")
        except ArchiveError as exc:
            logger.warning("CDX query failed for pixel %s: %s", pid, exc)
            counts["failed"] += 1
            return counts
        # A prefix query for pixel 123 also matches 1234...; keep exact hits only.
        records = [r for r in records if pixel_id_from_config_url(r.original_url) == pid
                   and r.status_code < 400]
        for year in cfg.years:
            for rec in select_semiannual(records, year):
                counts["selected"] += 1
                # a capture's attribution year is the calendar year of its
                # timestamp, so the same capture never yields two rows
                row_key = (pid, rec.timestamp)
                if store.has_capture("config_script", rec):
                    counts["skipped"] += 1
                    if row_key not in existing:
                        digest = _find_blob_hash(store, "config_script", rec)
                        if digest:
                            _append_config_capture(store, pid, rec, digest)
                            existing.add(row_key)
                    continue
                try:
                    body, _ = client.fetch_snapshot(rec)
                except (ArchiveError, ArchiveErrorPage) as exc:
                    logger.warning("config fetch failed for %s @%s: %s",
                                   pid, rec.timestamp, exc)
                    counts["failed"] += 1
                    continue
                digest = store.put_blob("config_script", rec, body)
                _append_config_capture(store, pid, rec, digest)
                existing.add(row_key)
                counts["fetched"] += 1
        return counts

    for counts in _map_jobs(crawl_one, pixel_ids, cfg.jobs):
        for key, value in counts.items():
            summary.counts[key] = summary.counts.get(key, 0) + value
    if not store.has_index("config_captures"):
        store.replace_index("config_captures", [])
    return summary


def _append_config_capture(store: SnapshotStore, pid: str,
                           rec: SnapshotRecord, digest: str) -> None:
    store.append_index("config_captures", {
        "pixel_id": pid,
        "year": rec.year,
        "timestamp": rec.timestamp,
        "iso_timestamp": rec.capture_time.isoformat(),
        "original_url": rec.original_url,
        "content_hash": digest,
    })


# -- parse_configs --------------------------------------------------------------------


def _stage_parse_configs(cfg: PipelineConfig, store: SnapshotStore) -> StageSummary:
    _require(store, "config_captures", "parse_configs", "crawl_configs")
    summary = StageSummary("parse_configs")
    targets: dict[tuple[str, str], None] = {}
    for row in store.read_index("config_captures"):
        targets[(row["content_hash"], row["pixel_id"])] = None

    out_rows = []
    parsed = failed = 0
    for digest, pid in sorted(targets):
        body = store.get_blob(digest)
        try:
            result = parse_config_script(body, expected_pixel_id=pid)
        except NoRegisterPluginRegion as exc:
            failed += 1
            out_rows.append({
                "content_hash": digest,
                "pixel_id": pid,
                "config": None,
                "features": None,
                "diagnostics": [],
                "parse_error": str(exc),
            })
            continue
        parsed += 1
        out_rows.append({
            "content_hash": digest,
            "pixel_id": pid,
            "config": result.config.to_json(),
            "features": config_feature_vector(result.config),
            "diagnostics": [{"level": d.level, "message": d.message}
                            for d in result.diagnostics],
            "parse_error": None,
        })
    store.replace_index("parses", out_rows)
    summary.counts["scripts"] = len(out_rows)
    summary.counts["parsed"] = parsed
    summary.counts["unparseable"] = failed
    return summary


# -- crack_keys --------------------------------------------------------------------


def _stage_crack_keys(cfg: PipelineConfig, store: SnapshotStore) -> StageSummary:
    _require(store, "parses", "crack_keys", "parse_configs")
    summary = StageSummary("crack_keys")
    digests: set[str] = set()
    observed: set[str] = set()
    for row in store.read_index("parses"):
        if not row.get("config"):
            continue
        unwanted = row["config"].get("unwanted_data", {})
        for rules in unwanted.get("sensitive", {}).values():
            digests.update(rules.get("cd", []))
            digests.update(rules.get("url", []))
        for rules in unwanted.get("blacklisted", {}).values():
            observed.update(rules.get("cd", []))
            observed.update(rules.get("url", []))

    summary.counts["digests"] = len(digests)
    summary.counts["observed_blacklisted_keys"] = len(observed)
    if not digests:
        store.replace_index("crack_results", [])
        summary.notes.append("no hashed sensitive keys in corpus")
        return summary
    try:
        dictionary = build_dictionary(cfg.wordlists, observed)
    except EmptyDictionary:
        if not cfg.wordlists:
            store.replace_index("crack_results", [])
            summary.notes.append("no wordlists configured; nothing cracked")
            summary.counts["cracked"] = 0
            return summary
        raise
    results, rate = crack(digests, dictionary)
    store.replace_index("crack_results", [r.to_json() for r in results])
    summary.counts["cracked"] = sum(1 for r in results if r.cracked)
    summary.counts["dictionary_size"] = len(dictionary)
    summary.notes.append(f"reversal_rate={rate:.4f}")
    return summary


# -- analyze -----------------------------------------------------------------------


def _load_observations(store: SnapshotStore) -> list[SiteYearObservation]:
    return [
        SiteYearObservation(
            domain=row["domain"], cohort=row["cohort"], year=row["year"],
            pixel_ids=set(row["pixel_ids"]))
        for row in store.read_index("observations")
    ]


def _stage_analyze(cfg: PipelineConfig, store: SnapshotStore) -> StageSummary:
    _require(store, "observations", "analyze", "extract_pixels")
    _require(store, "parses", "analyze", "parse_configs")
    summary = StageSummary("analyze")

    observations = _load_observations(store)
    captures = [
        ConfigCapture(pixel_id=row["pixel_id"], timestamp=row["timestamp"],
                      content_hash=row["content_hash"])
        for row in store.read_index("config_captures")
    ]
    features_by_key: dict[tuple[str, str], dict[str, bool]] = {}
    config_by_key: dict[tuple[str, str], dict] = {}
    for row in store.read_index("parses"):
        key = (row["content_hash"], row["pixel_id"])
        if row.get("features"):
            features_by_key[key] = row["features"]
        if row.get("config"):
            config_by_key[key] = row["config"]

    attributed, unattributed = attribute_configs(observations, captures)
    site_rows: list[SiteYearFeatures] = []
    for obs in attributed:
        if not obs.config_refs:
            continue
        merged: dict[str, bool] = {name: False for name in FEATURE_NAMES}
        for pid, digest in sorted(obs.config_refs):
            vector = features_by_key.get((digest, pid))
            if not vector:
                continue
            for name, value in vector.items():
                merged[name] = merged.get(name, False) or bool(value)
        site_rows.append(SiteYearFeatures(
            domain=obs.domain, cohort=obs.cohort, year=obs.year, features=merged))

    stats = adoption_stats(site_rows, features=FEATURE_NAMES)
    stable_rows = stable_cohort(site_rows, cfg.stable_min_years)
    stable_stats = adoption_stats(stable_rows, features=FEATURE_NAMES)

    pixel_site_years = {(o.domain, o.year) for o in observations if o.pixel_ids}
    config_site_years = {(r.domain, r.year) for r in site_rows}

    # Per-cohort-year denominators: sites with any pixel vs. sites with any
    # attributed configuration (the basis of every adoption proportion).
    site_counts: dict[tuple[str, int], dict[str, int]] = {}
    for o in observations:
        if o.pixel_ids:
            cell = site_counts.setdefault((o.cohort, o.year),
                                          {"pixel_found": 0, "config_found": 0})
            cell["pixel_found"] += 1
    for r in site_rows:
        cell = site_counts.setdefault((r.cohort, r.year),
                                      {"pixel_found": 0, "config_found": 0})
        cell["config_found"] += 1

    blacklisted_sites: dict[str, set[str]] = {}
    sensitive_sites: dict[str, set[str]] = {}
    for obs in attributed:
        for pid, digest in obs.config_refs:
            row_cfg = config_by_key.get((digest, pid))
            if not row_cfg:
                continue
            unwanted = row_cfg.get("unwanted_data", {})
            for rules in unwanted.get("blacklisted", {}).values():
                keys = set(rules.get("cd", [])) | set(rules.get("url", []))
                if keys:
                    blacklisted_sites.setdefault(obs.domain, set()).update(keys)
            for rules in unwanted.get("sensitive", {}).values():
                keys = set(rules.get("cd", [])) | set(rules.get("url", []))
                if keys:
                    sensitive_sites.setdefault(obs.domain, set()).update(keys)

    store.replace_index("site_year_features", [
        {"domain": r.domain, "cohort": r.cohort, "year": r.year, "features": r.features}
        for r in sorted(site_rows, key=lambda r: (r.domain, r.year, r.cohort))
    ])
    store.replace_index("adoption_stats", [s.to_json() for s in stats])
    store.replace_index("adoption_stats_stable", [s.to_json() for s in stable_stats])
    store.replace_index("unattributed_configs", [
        {"pixel_id": c.pixel_id, "timestamp": c.timestamp, "content_hash": c.content_hash}
        for c in sorted(unattributed, key=lambda c: (c.pixel_id, c.timestamp))
    ])
    store.replace_index("key_overlap", [
        {"group": "blacklisted", "curve": key_overlap_cdf(blacklisted_sites).to_json()},
        {"group": "sensitive", "curve": key_overlap_cdf(sensitive_sites).to_json()},
    ])
    store.replace_index("site_counts", [
        {"cohort": cohort, "year": year, **counts}
        for (cohort, year), counts in sorted(site_counts.items())
    ])

    summary.counts["site_years_with_configs"] = len(site_rows)
    summary.counts["site_years_with_pixels"] = len(pixel_site_years)
    summary.counts["config_site_years"] = len(config_site_years)
    summary.counts["unattributed_configs"] = len(unattributed)
    summary.counts["stat_rows"] = len(stats)
    summary.counts["stable_sites"] = len({r.domain for r in stable_rows})
    return summary


# -- report -----------------------------------------------------------------------


def _stage_report(cfg: PipelineConfig, store: SnapshotStore) -> StageSummary:
    _require(store, "adoption_stats", "report", "analyze")
    summary = StageSummary("report")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    stats = list(store.read_index("adoption_stats"))
    _write_adoption_csv(out_dir / "adoption.csv", stats)
    _write_json(out_dir / "adoption.json", stats)
    _write_json(out_dir / "adoption_stable.json",
                list(store.read_index("adoption_stats_stable")))
    _write_json(out_dir / "key_overlap.json", list(store.read_index("key_overlap")))
    _write_json(out_dir / "crack_results.json", list(store.read_index("crack_results")))
    _write_json(out_dir / "site_counts.json", list(store.read_index("site_counts")))
    _write_json(out_dir / "plot_series.json", _plot_series(stats))

    summary.counts["stat_rows"] = len(stats)
    summary.counts["files"] = 7
    summary.notes.append(f"reports in {out_dir}")
    return summary


def _write_adoption_csv(path: Path, stats: list[dict]) -> None:
    fields = ["cohort", "year", "feature", "n", "adopters", "p", "margin",
              "z", "p_value", "cohens_h", "flags"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in stats:
            writer.writerow([
                row["cohort"], row["year"], row["feature"], row["n"], row["adopters"],
                _fmt(row["p"]), _fmt(row["margin"]), _fmt(row["z"]),
                _fmt(row["p_value"]), _fmt(row["cohens_h"]),
                ";".join(row.get("flags", [])),
            ])


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _plot_series(stats: list[dict]) -> list[dict]:
    """Per-feature series of (year, p, margin, significance marker), the data
    behind adoption-over-time figures."""
    by_feature: dict[str, list[dict]] = {}
    for row in stats:
        by_feature.setdefault(row["feature"], []).append(row)
    series = []
    for feature in sorted(by_feature):
        rows = sorted(by_feature[feature], key=lambda r: (r["cohort"], r["year"]))
        series.append({
            "feature": feature,
            "points": [
                {
                    "cohort": r["cohort"],
                    "year": r["year"],
                    "p": r["p"],
                    "margin": r["margin"],
                    "significant_p01": (r["p_value"] is not None and r["p_value"] < 0.01),
                }
                for r in rows
            ],
        })
    return series
