"""Deterministic synthetic corpus for hermetic runs.

Twenty sites (12 control, 8 health) over 2017-2024, with explicit per-year
pixel installs and configuration scripts. The world is a plain data
structure so a test (or a person) can recount the expected adoption table
independently of the pipeline. Edge cases are baked in deliberately:

* sites whose pixel is visible but whose config was never archived
* a config capture in a year whose HTML did not carry that pixel
  (must stay unattributed for that year)
* multi-pixel sites with disagreeing configs (the at-least-one-pixel rule)
* a pixel present only inside an HTML comment
* archive-rewritten script URLs inside stored HTML
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cracker import sha256_hex
from .mock_archive import Capture, MockArchive

YEARS = list(range(2017, 2025))

# Sensitive parameter names hashed into demo configs. The first group is in
# the demo wordlist (crackable), the second is not.
CRACKABLE_KEYS = ("gender", "searchTerm", "specialty", "doctor", "q")
UNCRACKABLE_KEYS = ("zq9xkw", "vv7pl2m")

DEMO_WORDLIST = (
    "gender", "searchTerm", "specialty", "doctor", "q",
    "name", "address", "phone", "email", "dob", "lat", "lng",
)


@dataclass
class ConfigSpec:
    """Feature settings for one pixel's configuration script in one year."""

    pixel_id: str
    month: int = 3
    automatic_setup: bool = False
    inferred_events: bool = False
    first_party_cookies: bool = False
    match_keys: tuple[str, ...] = ()
    blacklisted: dict = field(default_factory=dict)   # event -> {"cd": [...], "url": [...]}
    sensitive_plain: dict = field(default_factory=dict)  # same, hashed at generation
    protected_data_mode: bool = False
    est_rules: tuple[tuple[str, str, str], ...] = ()  # (trigger text, event, rule id)


@dataclass
class SiteYear:
    pixels_in_html: list[str] = field(default_factory=list)
    commented_pixels: list[str] = field(default_factory=list)
    configs: list[ConfigSpec] = field(default_factory=list)
    rogue_configs: list[ConfigSpec] = field(default_factory=list)  # pixel not in HTML


@dataclass
class Site:
    domain: str
    cohort: str
    years: dict[int, SiteYear] = field(default_factory=dict)


def pixel_id_for(site_index: int, pixel_index: int) -> str:
    return f"9{site_index:03d}{pixel_index}" + "0" * 10


def build_world() -> list[Site]:
    """The explicit site/year/config table the demo archive serves."""
    sites: list[Site] = []
    for i in range(12):
        sites.append(Site(domain=f"control{i:02d}.example", cohort="control"))
    for i in range(8):
        sites.append(Site(domain=f"health{i:02d}.example", cohort="health"))

    for si, site in enumerate(sites):
        health = site.cohort == "health"
        pid = pixel_id_for(si, 0)
        start_year = 2017 + (si % 3)  # sites come online at different times
        for year in YEARS:
            if year < start_year:
                continue
            sy = SiteYear(pixels_in_html=[pid])
            # Archival gap: every fifth (site, year) cell has the pixel in
            # HTML but no archived config script.
            if (si + year) % 5 == 0:
                site.years[year] = sy
                continue
            spec = ConfigSpec(
                pixel_id=pid,
                automatic_setup=year <= 2022 or (year == 2023 and si % 2 == 0),
                inferred_events=not (health and year == 2024 and si % 2 == 0),
                first_party_cookies=year >= 2018,
                match_keys=_match_keys_for(si, year, health),
                blacklisted=_blacklisted_for(si, year),
                sensitive_plain=_sensitive_for(si, year, health),
                protected_data_mode=_core_setup_for(si, year, health),
                est_rules=_est_rules_for(si, year),
            )
            sy.configs.append(spec)
            site.years[year] = sy

    # Edge case: health02 gains pixel B in HTML only from 2020, but a config
    # for B was archived in 2019 (stays unattributed for 2019).
    h2 = sites[14]
    pid_b = pixel_id_for(14, 1)
    if 2019 in h2.years:
        h2.years[2019].rogue_configs.append(ConfigSpec(
            pixel_id=pid_b, inferred_events=True, first_party_cookies=True))
    for year in (2020, 2021):
        if year in h2.years:
            h2.years[year].pixels_in_html.append(pid_b)
            h2.years[year].configs.append(ConfigSpec(
                pixel_id=pid_b, month=8, inferred_events=True,
                first_party_cookies=True,
                match_keys=("em", "ph")))

    # Edge case: health01 runs two pixels in 2023-2024; only one is in
    # ProtectedDataMode, so the site still counts as a core_setup adopter.
    h1 = sites[13]
    pid_c = pixel_id_for(13, 1)
    for year in (2023, 2024):
        if year in h1.years:
            h1.years[year].pixels_in_html.append(pid_c)
            h1.years[year].configs.append(ConfigSpec(
                pixel_id=pid_c, month=9, inferred_events=True,
                first_party_cookies=True, protected_data_mode=False))

    # Edge case: control05 carries an extra pixel only inside an HTML comment
    # from 2020 on (must not enter the live observation).
    c5 = sites[5]
    pid_d = pixel_id_for(5, 7)
    for year in (2020, 2021, 2022):
        if year in c5.years:
            c5.years[year].commented_pixels.append(pid_d)

    return sites


def _match_keys_for(si: int, year: int, health: bool) -> tuple[str, ...]:
    if year < 2018 or si % 3 == 2:
        return ()
    if health and year >= 2023 and si % 2 == 1:
        return ()  # scrutiny-era rollback on some health sites
    keys = ["em", "ph"]
    if year >= 2020:
        keys += ["fn", "ln"]
    if year >= 2021 and si % 2 == 0:
        keys += ["ge", "db", "ct", "st", "zp", "country", "external_id"]
    return tuple(keys)


def _blacklisted_for(si: int, year: int) -> dict:
    if year < 2020 or si % 4 == 3:
        return {}
    rules = {"ViewContent": {"cd": ["em"], "url": ["lat", "lng"]}}
    if si % 2 == 0:
        rules["PageView"] = {"cd": [], "url": ["q", "searchTerm"]}
    return rules


def _sensitive_for(si: int, year: int, health: bool) -> dict:
    if year < 2021:
        return {}
    if health:
        keys = [CRACKABLE_KEYS[si % len(CRACKABLE_KEYS)], "doctor"]
        if si % 2 == 1:
            keys.append(UNCRACKABLE_KEYS[si % len(UNCRACKABLE_KEYS)])
        return {"PageView": {"cd": [], "url": sorted(set(keys))}}
    if si % 3 == 0:
        return {"PageView": {"cd": [], "url": ["searchTerm"]}}
    return {}


def _core_setup_for(si: int, year: int, health: bool) -> bool:
    if year < 2023:
        return False
    if health:
        return year == 2024 or si % 2 == 1
    return year == 2024 and si % 6 == 0


def _est_rules_for(si: int, year: int) -> tuple[tuple[str, str, str], ...]:
    if year < 2023 or si % 3 != 0:
        return ()
    rules = [("Schedule appointment", "Schedule", f"36901335902{si:02d}01")]
    if si % 2 == 0:
        rules.append(("Donate now", "Donate", f"36901335902{si:02d}02"))
    return tuple(rules)


# -- body generation -----------------------------------------------------------


def html_for(site: Site, year: int, sy: SiteYear) -> bytes:
    pieces = [
        "<!DOCTYPE html><html><head>",
        f"<title>{site.domain} ({year})</title>",
        '<meta charset="utf-8">',
    ]
    for i, pid in enumerate(sy.pixels_in_html):
        quote = "'" if i % 2 == 0 else '"'
        pieces.append(
            "<script>!function(f,b,e,v,n,t,s){if(f.fbq)return;n=f.fbq=function()"
            "{n.callMethod?n.callMethod.apply(n,arguments):n.queue.push(arguments)};"
            "t=b.createElement(e);t.async=!0;t.src=v;s=b.getElementsByTagName(e)[0];"
            "s.parentNode.insertBefore(t,s)}(window,document,'script',"
            "'https://connect.facebook.net/en_US/fbevents.js');"
            f"fbq({quote}init{quote}, {quote}{pid}{quote});"
            f"fbq({quote}track{quote}, {quote}PageView{quote});</script>")
        if i % 2 == 0:
            pieces.append(
                f'<noscript><img height="1" width="1" style="display:none" '
                f'src="https://www.facebook.com/tr?id={pid}&ev=PageView&noscript=1"/>'
                "</noscript>")
        else:
            # As captured through the archive: the script URL carries a
            # replay prefix that extraction must strip first.
            pieces.append(
                f'<script async src="https://web.archive.org/web/{year}0102030405js_/'
                f'https://connect.facebook.net/signals/config/{pid}?v=2.9.{year % 100}">'
                "</script>")
    for pid in sy.commented_pixels:
        pieces.append(f"<!-- legacy tracker, disabled 2019\n"
                      f"<script>fbq('init', '{pid}');</script>\n-->")
    pieces.append(f"</head><body><h1>{site.domain}</h1>"
                  f"<p>Welcome to {site.domain}, archived in {year}.</p>"
                  "</body></html>")
    return "\n".join(pieces).encode("utf-8")


def config_script_for(spec: ConfigSpec) -> bytes:
    """Render a configuration script: minified junk, then the structured tail."""
    pid = spec.pixel_id
    lines = [
        '/*! tracker config */ !function(){var g=/["\']/g,u=window&&window.top;'
        'var q=[];for(var i=0;i<4;i++){q.push("seg"+i)}var z=q.join(",");}();',
        f'fbq.registerPlugin("{pid}", {{__fbEventsPlugin: 1, '
        "plugin: function(fbq, instance, config) {",
    ]
    opt_ins = []
    if spec.automatic_setup:
        opt_ins.append("AutomaticSetup")
    if spec.inferred_events:
        opt_ins.append("InferredEvents")
    if spec.first_party_cookies:
        opt_ins.append("FirstPartyCookies")
    if spec.match_keys:
        opt_ins.append("AutomaticMatching")
    if spec.blacklisted or spec.sensitive_plain:
        opt_ins.append("UnwantedData")
    if spec.protected_data_mode:
        opt_ins.append("ProtectedDataMode")
    for name in opt_ins:
        lines.append(f'instance.optIn("{pid}", "{name}", true);')
    if spec.match_keys:
        keys = ", ".join(f'"{k}"' for k in spec.match_keys)
        lines.append(f'config.set("{pid}", "automaticMatching", '
                     f'{{"selectedMatchKeys": [{keys}]}});')
    if spec.blacklisted or spec.sensitive_plain:
        payload = {}
        if spec.blacklisted:
            payload["blacklisted_keys"] = spec.blacklisted
        if spec.sensitive_plain:
            payload["sensitive_keys"] = {
                event: {channel: [sha256_hex(k) for k in keys]
                        for channel, keys in rules.items()}
                for event, rules in spec.sensitive_plain.items()
            }
        lines.append(f'config.set("{pid}", "unwantedData", {json.dumps(payload)});')
    if spec.est_rules:
        entries = []
        for trigger, event, rule_id in spec.est_rules:
            entries.append(
                '{"condition": {"event_type": "click", "conditions": '
                f'[{{"extractor_type": "CONSTANT_VALUE", "value": "{trigger}"}}]}}, '
                f'"derived_event_name": "{event}", "rule_status": null, '
                f'"rule_id": "{rule_id}"}}')
        lines.append(f'fbq.set("estRules", "{pid}", [{", ".join(entries)}]);')
    lines.append(f'instance.configLoaded("{pid}");')
    lines.append("}});")
    return "\n".join(lines).encode("utf-8")


# -- archive population -----------------------------------------------------------


def site_page_url(domain: str) -> str:
    return f"https://{domain}/"


def config_url(pid: str, year: int) -> str:
    return f"https://connect.facebook.net/signals/config/{pid}?v=2.9.{year % 100}"


def populate_archive(archive: MockArchive) -> list[Site]:
    """Load the demo world into a mock archive; returns the world."""
    world = build_world()
    for site in world:
        for year, sy in sorted(site.years.items()):
            body = html_for(site, year, sy)
            for ts in (f"{year}0102030405", f"{year}0703040506"):
                archive.add_capture(Capture(
                    url=site_page_url(site.domain), timestamp=ts, body=body))
            for spec in sy.configs + sy.rogue_configs:
                archive.add_capture(Capture(
                    url=config_url(spec.pixel_id, year),
                    timestamp=f"{year}{spec.month:02d}15120000",
                    body=config_script_for(spec),
                    mime="application/x-javascript",
                ))
    return world


def write_demo_inputs(workdir: Path, cdx_url: str, replay_template: str,
                      min_request_interval: float = 0.0) -> Path:
    """Write site lists, the wordlist, and a pipeline config file for a
    hermetic run; returns the config path."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    world = build_world()
    for cohort in ("control", "health"):
        names = sorted(s.domain for s in world if s.cohort == cohort)
        (workdir / f"{cohort}_sites.txt").write_text(
            "\n".join(names) + "\n", encoding="utf-8")
    (workdir / "wordlist.txt").write_text(
        "\n".join(DEMO_WORDLIST) + "\n", encoding="utf-8")
    config = {
        "cohorts": {
            "control": str(workdir / "control_sites.txt"),
            "health": str(workdir / "health_sites.txt"),
        },
        "years": YEARS,
        "cdx_url": cdx_url,
        "replay_template": replay_template,
        "storage_root": str(workdir / "store"),
        "output_dir": str(workdir / "reports"),
        "wordlists": [str(workdir / "wordlist.txt")],
        "fetch_policy": {
            "max_cdx_retries": 5,
            "max_snapshot_retries": 10,
            "batch_limit": 100000,
            "min_request_interval": min_request_interval,
        },
        "stable_min_years": 4,
    }
    config_path = workdir / "pipeline.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return config_path
