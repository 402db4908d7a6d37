"""Executable configuration -> tracking-behavior mapping.

Given a parsed configuration and a synthetic page interaction, emit the
event payloads the tracker would send. Nothing is executed or transmitted;
the mapping is encoded directly so runs are deterministic and hermetic:

* page load always yields PageView; page-metadata events fire per metadata
  blob only with the AutomaticSetup opt-in
* button clicks yield SubscribedButtonClick when AutomaticSetup or
  InferredEvents is opted in, plus one derived event per matching rule from
  the point-and-click event setup (carrying its rule_id)
* form submits add hashed form-field identifiers (udff) for the selected
  match keys when AutomaticMatching is opted in
* FirstPartyCookies controls the fbp/fbc parameters
* unwanted-data rules blank matching URL query values (`_removed_`) and drop
  matching custom-data keys per event
* ProtectedDataMode empties custom data and truncates page/referrer URLs to
  scheme+host, after every other step

`patch_out` produces the configuration with one feature removed so two
simulations can be diffed, which is the differential experiment in code.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Optional, Sequence, Union
from urllib.parse import parse_qsl, quote, urlencode, urlsplit, urlunsplit

from .configscript import MATCH_KEYS, PixelConfiguration, UnwantedDataRules

REMOVED_MARKER = "_removed_"

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

PATCHABLE_FEATURES = (
    "automatic_events",
    "event_setup_tool",
    "first_party_cookies",
    "advanced_matching",
    "unwanted_data",
    "core_setup",
)


class InvalidInteraction(Exception):
    """Interaction index outside the context's buttons."""


@dataclass(frozen=True)
class Button:
    text: str
    form_fields: tuple[str, ...] = ()


@dataclass(frozen=True)
class PageContext:
    """The synthetic page a simulation runs against."""

    page_url: str
    referrer_url: str = ""
    fbclid: Optional[str] = None
    microdata_blobs: tuple[Any, ...] = ()
    buttons: tuple[Button, ...] = ()
    form_values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        parts = urlsplit(self.page_url)
        if not parts.scheme or not parts.netloc:
            raise ValueError(f"page_url must be absolute: {self.page_url!r}")

    def to_json(self) -> dict:
        return {
            "page_url": self.page_url,
            "referrer_url": self.referrer_url,
            "fbclid": self.fbclid,
            "microdata_blobs": list(self.microdata_blobs),
            "buttons": [{"text": b.text, "form_fields": list(b.form_fields)}
                        for b in self.buttons],
            "form_values": dict(self.form_values),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PageContext":
        return cls(
            page_url=obj["page_url"],
            referrer_url=obj.get("referrer_url", ""),
            fbclid=obj.get("fbclid"),
            microdata_blobs=tuple(obj.get("microdata_blobs", [])),
            buttons=tuple(Button(b["text"], tuple(b.get("form_fields", [])))
                          for b in obj.get("buttons", [])),
            form_values=dict(obj.get("form_values", {})),
        )


@dataclass
class EventPayload:
    """One simulated tracking request."""

    event_name: str
    dl: str
    rl: str
    cd: dict[str, str] = field(default_factory=dict)
    ud: dict[str, str] = field(default_factory=dict)
    udff: dict[str, str] = field(default_factory=dict)
    fbp: Optional[str] = None
    fbc: Optional[str] = None
    rule_id: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "event_name": self.event_name,
            "dl": self.dl,
            "rl": self.rl,
            "cd": dict(sorted(self.cd.items())),
            "ud": dict(sorted(self.ud.items())),
            "udff": dict(sorted(self.udff.items())),
            "fbp": self.fbp,
            "fbc": self.fbc,
            "rule_id": self.rule_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EventPayload":
        return cls(
            event_name=obj["event_name"],
            dl=obj.get("dl", ""),
            rl=obj.get("rl", ""),
            cd=dict(obj.get("cd", {})),
            ud=dict(obj.get("ud", {})),
            udff=dict(obj.get("udff", {})),
            fbp=obj.get("fbp"),
            fbc=obj.get("fbc"),
            rule_id=obj.get("rule_id"),
        )


Interaction = Union[str, tuple[str, int]]


def hash_match_value(key_code: str, raw: str) -> str:
    """Normalize and hash one form-field identifier the way the tracker does
    before transmission: trim+lowercase, digits only for phone numbers,
    alphanumeric only for city/state."""
    if key_code not in MATCH_KEYS:
        raise ValueError(f"unknown match key {key_code!r}")
    value = raw.strip().lower()
    if key_code == "ph":
        value = "".join(ch for ch in value if ch.isdigit())
    elif key_code in ("ct", "st"):
        value = "".join(ch for ch in value if ch.isalnum())
    return hashlib.sha256(value.encode("utf-8")).hexdigest()


def _context_fingerprint(ctx: PageContext) -> str:
    seed = f"{ctx.page_url}|{ctx.referrer_url}|{ctx.fbclid or ''}"
    return hashlib.sha256(seed.encode("utf-8")).hexdigest()


def _synthetic_epoch_ms(fingerprint: str) -> int:
    # A stable, plausible-looking creation time derived from the context.
    return 1_500_000_000_000 + int(fingerprint[:10], 16) % 100_000_000_000


def synthetic_fbp(ctx: PageContext) -> str:
    fp = _context_fingerprint(ctx)
    return f"fb.1.{_synthetic_epoch_ms(fp)}.{int(fp[10:20], 16) % 10_000_000_000}"


def synthetic_fbc(ctx: PageContext) -> Optional[str]:
    if ctx.fbclid is None:
        return None
    fp = _context_fingerprint(ctx)
    return f"fb.1.{_synthetic_epoch_ms(fp)}.{ctx.fbclid}"


def simulate(cfg: PixelConfiguration, ctx: PageContext, interaction: Interaction,
             case_insensitive_params: bool = False) -> list[EventPayload]:
    """Emit the payloads one interaction would produce under `cfg`."""
    kind, index = _normalize_interaction(interaction)

    def on(name: str) -> bool:
        return cfg.opt_ins.get(name) is True

    payloads: list[EventPayload] = []
    if kind == "page_load":
        payloads.append(_base_payload("PageView", ctx))
        if on("AutomaticSetup"):
            for blob in ctx.microdata_blobs:
                p = _base_payload("Microdata", ctx)
                p.cd["DataLayer"] = json.dumps(blob, sort_keys=True, ensure_ascii=False)
                payloads.append(p)
    else:
        if index is None or not (0 <= index < len(ctx.buttons)):
            raise InvalidInteraction(f"{kind} index {index} out of range")
        button = ctx.buttons[index]
        if on("AutomaticSetup") or on("InferredEvents"):
            p = _base_payload("SubscribedButtonClick", ctx)
            p.cd["buttonText"] = button.text
            if button.form_fields:
                p.cd["formFeatures"] = json.dumps(list(button.form_fields))
            payloads.append(p)
        for rule in cfg.est_rules:
            if button.text in rule.trigger_values:
                p = _base_payload(rule.derived_event_name, ctx)
                p.cd["buttonText"] = button.text
                p.rule_id = rule.rule_id
                payloads.append(p)
        if kind == "form_submit" and on("AutomaticMatching"):
            udff = {
                key: hash_match_value(key, ctx.form_values[key])
                for key in cfg.selected_match_keys
                if key in ctx.form_values
            }
            for p in payloads:
                p.udff = dict(udff)

    if on("FirstPartyCookies"):
        fbp = synthetic_fbp(ctx)
        fbc = synthetic_fbc(ctx)
        for p in payloads:
            p.fbp = fbp
            p.fbc = fbc

    payloads = [apply_unwanted_data(cfg.unwanted_data, p, case_insensitive_params)
                for p in payloads]
    if on("ProtectedDataMode"):
        payloads = [apply_protected_mode(p) for p in payloads]
    return payloads


def _normalize_interaction(interaction: Interaction) -> tuple[str, Optional[int]]:
    if isinstance(interaction, str):
        kind, index = interaction, None
    else:
        kind, index = interaction
    if kind not in ("page_load", "button_click", "form_submit"):
        raise InvalidInteraction(f"unknown interaction kind {kind!r}")
    if kind == "page_load":
        return kind, None
    if index is None:
        raise InvalidInteraction(f"{kind} requires a button index")
    return kind, int(index)


def _base_payload(event_name: str, ctx: PageContext) -> EventPayload:
    return EventPayload(event_name=event_name, dl=ctx.page_url, rl=ctx.referrer_url)


# -- tracking restrictions ---------------------------------------------------


def apply_unwanted_data(rules: UnwantedDataRules, payload: EventPayload,
                        case_insensitive: bool = False) -> EventPayload:
    """Apply per-event filtering: URL query values for matching names become
    `_removed_`; matching custom-data keys are dropped entirely. Hashed rules
    match when SHA-256 of the parameter name equals a stored digest."""
    url_matcher = _rule_matcher(rules, payload.event_name, "url", case_insensitive)
    cd_matcher = _rule_matcher(rules, payload.event_name, "cd", case_insensitive)
    new = replace(
        payload,
        dl=_sanitize_url(payload.dl, url_matcher),
        rl=_sanitize_url(payload.rl, url_matcher),
        cd={k: v for k, v in payload.cd.items() if not cd_matcher(k)},
        ud=dict(payload.ud),
        udff=dict(payload.udff),
    )
    return new


def _rule_matcher(rules: UnwantedDataRules, event_name: str, channel: str,
                  case_insensitive: bool) -> Callable[[str], bool]:
    plain: set[str] = set()
    hashed: set[str] = set()
    bl = rules.blacklisted.get(event_name)
    if bl is not None:
        plain |= getattr(bl, channel)
    sens = rules.sensitive.get(event_name)
    if sens is not None:
        hashed |= getattr(sens, channel)
    if case_insensitive:
        plain = {p.lower() for p in plain}

    def matches(name: str) -> bool:
        candidates = [name.lower()] if case_insensitive else [name]
        for cand in candidates:
            if cand in plain:
                return True
            if hashed and hashlib.sha256(cand.encode("utf-8")).hexdigest() in hashed:
                return True
        return False

    return matches


def _sanitize_url(url: str, matches: Callable[[str], bool]) -> str:
    if not url or "?" not in url:
        return url
    parts = urlsplit(url)
    pairs = parse_qsl(parts.query, keep_blank_values=True)
    if not any(matches(name) for name, _ in pairs):
        return url
    sanitized = [(name, REMOVED_MARKER if matches(name) else value)
                 for name, value in pairs]
    query = urlencode(sanitized, quote_via=quote)
    return urlunsplit((parts.scheme, parts.netloc, parts.path, query, parts.fragment))


def apply_protected_mode(payload: EventPayload) -> EventPayload:
    """Strip custom data and truncate page/referrer URLs to scheme+host."""
    return replace(
        payload,
        dl=_truncate_to_origin(payload.dl),
        rl=_truncate_to_origin(payload.rl),
        cd={},
        ud=dict(payload.ud),
        udff=dict(payload.udff),
    )


def _truncate_to_origin(url: str) -> str:
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        return url
    return f"{parts.scheme}://{parts.netloc}"


def find_circumvented_payloads(cfg: PixelConfiguration,
                               payloads: Iterable[EventPayload]) -> list[EventPayload]:
    """Flag payloads that smuggle a hashed full URL through user data while
    the configuration is in ProtectedDataMode."""
    if cfg.opt_ins.get("ProtectedDataMode") is not True:
        return []
    return [p for p in payloads
            if "dl" in p.ud and _HEX64.match(p.ud["dl"] or "")]


# -- differential comparison ---------------------------------------------------


@dataclass(frozen=True)
class ParamChange:
    event_name: str
    occurrence: int
    param: str
    before: Optional[str]
    after: Optional[str]

    @property
    def kind(self) -> str:
        if self.before is None:
            return "added"
        if self.after is None:
            return "removed"
        return "changed"


@dataclass
class BehaviorDelta:
    only_in_before: list[str] = field(default_factory=list)
    only_in_after: list[str] = field(default_factory=list)
    param_changes: list[ParamChange] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.only_in_before or self.only_in_after or self.param_changes)

    def to_json(self) -> dict:
        return {
            "only_in_before": list(self.only_in_before),
            "only_in_after": list(self.only_in_after),
            "param_changes": [
                {"event_name": c.event_name, "occurrence": c.occurrence,
                 "param": c.param, "kind": c.kind,
                 "before": c.before, "after": c.after}
                for c in self.param_changes
            ],
        }


def flatten_payload(payload: EventPayload) -> dict[str, str]:
    flat: dict[str, str] = {"dl": payload.dl, "rl": payload.rl}
    if payload.fbp is not None:
        flat["fbp"] = payload.fbp
    if payload.fbc is not None:
        flat["fbc"] = payload.fbc
    if payload.rule_id is not None:
        flat["rule_id"] = payload.rule_id
    for prefix, mapping in (("cd", payload.cd), ("ud", payload.ud), ("udff", payload.udff)):
        for k, v in mapping.items():
            flat[f"{prefix}.{k}"] = v
    return flat


def _occurrence_keys(payloads: Sequence[EventPayload]) -> list[tuple[str, int]]:
    counts: dict[str, int] = {}
    keys = []
    for p in payloads:
        occ = counts.get(p.event_name, 0)
        counts[p.event_name] = occ + 1
        keys.append((p.event_name, occ))
    return keys


def diff_payloads(before: Sequence[EventPayload],
                  after: Sequence[EventPayload]) -> BehaviorDelta:
    """Compare two payload lists: events present on one side only, and
    parameter-level changes for shared events. Output ordering is
    deterministic by (event name, occurrence, parameter)."""
    before_map = dict(zip(_occurrence_keys(before), before))
    after_map = dict(zip(_occurrence_keys(after), after))

    delta = BehaviorDelta()
    for key in sorted(before_map.keys() - after_map.keys()):
        delta.only_in_before.append(key[0])
    for key in sorted(after_map.keys() - before_map.keys()):
        delta.only_in_after.append(key[0])

    for key in sorted(before_map.keys() & after_map.keys()):
        b_flat = flatten_payload(before_map[key])
        a_flat = flatten_payload(after_map[key])
        for param in sorted(b_flat.keys() | a_flat.keys()):
            b_val = b_flat.get(param)
            a_val = a_flat.get(param)
            if b_val != a_val:
                delta.param_changes.append(ParamChange(
                    event_name=key[0], occurrence=key[1], param=param,
                    before=b_val, after=a_val))
    return delta


# -- feature patching -------------------------------------------------------------


def patch_out(cfg: PixelConfiguration, feature: str) -> PixelConfiguration:
    """Return a copy of `cfg` with one adoption feature removed, mirroring
    the patch-and-replay experiment on configuration scripts."""
    if feature not in PATCHABLE_FEATURES:
        raise ValueError(f"unknown feature {feature!r}; choose from {PATCHABLE_FEATURES}")
    opt_ins = dict(cfg.opt_ins)
    est_rules = list(cfg.est_rules)
    unwanted = UnwantedDataRules(
        blacklisted={e: _copy_keysets(ks) for e, ks in cfg.unwanted_data.blacklisted.items()},
        sensitive={e: _copy_keysets(ks) for e, ks in cfg.unwanted_data.sensitive.items()},
    )
    selected = list(cfg.selected_match_keys)
    if feature == "automatic_events":
        opt_ins.pop("AutomaticSetup", None)
        opt_ins.pop("InferredEvents", None)
    elif feature == "event_setup_tool":
        est_rules = []
    elif feature == "first_party_cookies":
        opt_ins.pop("FirstPartyCookies", None)
    elif feature == "advanced_matching":
        opt_ins.pop("AutomaticMatching", None)
    elif feature == "unwanted_data":
        unwanted = UnwantedDataRules()
    elif feature == "core_setup":
        opt_ins.pop("ProtectedDataMode", None)
    return PixelConfiguration(
        pixel_id=cfg.pixel_id,
        opt_ins=opt_ins,
        selected_match_keys=selected,
        unwanted_data=unwanted,
        est_rules=est_rules,
        aux_sets=dict(cfg.aux_sets),
    )


def _copy_keysets(ks):
    from .configscript import KeySets

    return KeySets(cd=set(ks.cd), url=set(ks.url))
