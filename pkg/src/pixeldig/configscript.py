"""Typed parsing of Pixel configuration scripts.

Only the tail of a configuration script is structured; the rest is minified
and obfuscated. So this is a scanner, not a JS parser: it walks the script
once (string-, comment-, and regex-literal-aware), locates the three
structured call shapes

    instance.optIn(<pixelID>, <configName>, <bool>)
    config.set(<pixelID>, <configName>, <configJSON>)
    fbq.set(<configName>, <pixelID>, <payload>)

extracts their argument lists by balanced-delimiter scanning, and folds the
results into a PixelConfiguration. Anything it cannot interpret degrades to
`aux_sets` plus a diagnostic rather than failing the parse.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional

MATCH_KEYS = ("em", "ph", "fn", "ln", "ge", "db", "ct", "st", "zp", "country", "external_id")

_HEX64 = re.compile(r"^[0-9a-f]{64}$")
_HEX64_ANYCASE = re.compile(r"^[0-9a-fA-F]{64}$")

_CALL_HEADS = ("instance.optIn", "config.set", "fbq.set")
_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_$")


class NoRegisterPluginRegion(Exception):
    """No structured configuration calls found; likely a pre-2017 script or
    something that is not a configuration script at all."""


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "warn" | "info"
    message: str


@dataclass
class KeySets:
    cd: set[str] = field(default_factory=set)
    url: set[str] = field(default_factory=set)

    def to_json(self) -> dict:
        return {"cd": sorted(self.cd), "url": sorted(self.url)}

    @classmethod
    def from_json(cls, obj: dict) -> "KeySets":
        return cls(cd=set(obj.get("cd", [])), url=set(obj.get("url", [])))


@dataclass
class UnwantedDataRules:
    blacklisted: dict[str, KeySets] = field(default_factory=dict)
    sensitive: dict[str, KeySets] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.blacklisted and not self.sensitive

    def to_json(self) -> dict:
        return {
            "blacklisted": {ev: ks.to_json() for ev, ks in sorted(self.blacklisted.items())},
            "sensitive": {ev: ks.to_json() for ev, ks in sorted(self.sensitive.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UnwantedDataRules":
        return cls(
            blacklisted={ev: KeySets.from_json(ks) for ev, ks in obj.get("blacklisted", {}).items()},
            sensitive={ev: KeySets.from_json(ks) for ev, ks in obj.get("sensitive", {}).items()},
        )


@dataclass
class EstRule:
    """One point-and-click event definition: a condition tree, the button
    texts that trigger it, and the event it derives."""

    condition: Any
    trigger_values: list[str]
    derived_event_name: str
    rule_id: str

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "trigger_values": list(self.trigger_values),
            "derived_event_name": self.derived_event_name,
            "rule_id": self.rule_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EstRule":
        return cls(
            condition=obj.get("condition"),
            trigger_values=list(obj.get("trigger_values", [])),
            derived_event_name=obj["derived_event_name"],
            rule_id=obj["rule_id"],
        )


@dataclass
class PixelConfiguration:
    pixel_id: str
    opt_ins: dict[str, bool] = field(default_factory=dict)
    selected_match_keys: list[str] = field(default_factory=list)
    unwanted_data: UnwantedDataRules = field(default_factory=UnwantedDataRules)
    est_rules: list[EstRule] = field(default_factory=list)
    aux_sets: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "pixel_id": self.pixel_id,
            "opt_ins": dict(sorted(self.opt_ins.items())),
            "selected_match_keys": list(self.selected_match_keys),
            "unwanted_data": self.unwanted_data.to_json(),
            "est_rules": [r.to_json() for r in self.est_rules],
            "aux_sets": self.aux_sets,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PixelConfiguration":
        return cls(
            pixel_id=obj["pixel_id"],
            opt_ins=dict(obj.get("opt_ins", {})),
            selected_match_keys=list(obj.get("selected_match_keys", [])),
            unwanted_data=UnwantedDataRules.from_json(obj.get("unwanted_data", {})),
            est_rules=[EstRule.from_json(r) for r in obj.get("est_rules", [])],
            aux_sets=dict(obj.get("aux_sets", {})),
        )

    def __eq__(self, other):
        if not isinstance(other, PixelConfiguration):
            return NotImplemented
        return self.to_json() == other.to_json()


@dataclass
class ParseResult:
    config: PixelConfiguration
    diagnostics: list[Diagnostic]

    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.level == "warn"]


# -- JS-aware scanning ---------------------------------------------------------


def _skip_string(text: str, i: int) -> int:
    """i points at an opening quote; returns index just past the close."""
    quote = text[i]
    i += 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == quote:
            return i + 1
        i += 1
    return n


def _skip_regex(text: str, i: int) -> int:
    """i points at the '/' opening a regex literal; returns index past it."""
    i += 1
    n = len(text)
    in_class = False
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == "[":
            in_class = True
        elif c == "]":
            in_class = False
        elif c == "/" and not in_class:
            i += 1
            # trailing flags
            while i < n and text[i] in _IDENT_CHARS:
                i += 1
            return i
        elif c == "\n":
            return i  # not a regex after all; bail
        i += 1
    return n


def _regex_can_start(prev: str) -> bool:
    # A '/' starts a regex literal only where an expression may start.
    return prev == "" or prev in "(,=:[!&|?{};+-*%~^<>"


@dataclass(frozen=True)
class _Call:
    head: str
    args: list[str]
    offset: int


def _scan_calls(text: str) -> list[_Call]:
    """One pass over the script collecting structured-call argument lists.

    Skips string literals, comments, and regex literals so pattern lookalikes
    inside them are ignored.
    """
    calls: list[_Call] = []
    i = 0
    n = len(text)
    prev_code_char = ""
    while i < n:
        c = text[i]
        if c in "'\"`":
            i = _skip_string(text, i)
            prev_code_char = '"'
            continue
        if c == "/" and i + 1 < n:
            nxt = text[i + 1]
            if nxt == "/":
                j = text.find("\n", i)
                i = n if j == -1 else j + 1
                continue
            if nxt == "*":
                j = text.find("*/", i + 2)
                i = n if j == -1 else j + 2
                continue
            if _regex_can_start(prev_code_char):
                i = _skip_regex(text, i)
                continue
        matched = False
        for head in _CALL_HEADS:
            if text.startswith(head, i) and (i == 0 or text[i - 1] not in _IDENT_CHARS):
                j = i + len(head)
                while j < n and text[j] in " \t\r\n":
                    j += 1
                if j < n and text[j] == "(":
                    inner, end = _balanced_span(text, j)
                    if inner is not None:
                        calls.append(_Call(head=head, args=_split_args(inner), offset=i))
                        i = end
                        prev_code_char = ")"
                        matched = True
                        break
        if matched:
            continue
        if not c.isspace():
            prev_code_char = c
        i += 1
    return calls


def _balanced_span(text: str, open_paren: int) -> tuple[Optional[str], int]:
    """Extract the argument text between balanced parens starting at
    `open_paren`. Returns (inner text, index past close) or (None, open+1)."""
    depth = 0
    i = open_paren
    n = len(text)
    start = open_paren + 1
    while i < n:
        c = text[i]
        if c in "'\"`":
            i = _skip_string(text, i)
            continue
        if c == "/" and i + 1 < n and text[i + 1] in "/*":
            if text[i + 1] == "/":
                j = text.find("\n", i)
                i = n if j == -1 else j + 1
            else:
                j = text.find("*/", i + 2)
                i = n if j == -1 else j + 2
            continue
        if c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
            if depth == 0:
                return text[start:i], i + 1
        i += 1
    return None, open_paren + 1


def _split_args(inner: str) -> list[str]:
    """Split an argument list on top-level commas."""
    args: list[str] = []
    depth = 0
    i = 0
    n = len(inner)
    piece_start = 0
    while i < n:
        c = inner[i]
        if c in "'\"`":
            i = _skip_string(inner, i)
            continue
        if c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        elif c == "," and depth == 0:
            args.append(inner[piece_start:i].strip())
            piece_start = i + 1
        i += 1
    tail = inner[piece_start:].strip()
    if tail:
        args.append(tail)
    return args


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "v": "\v", "0": "\0"}


def _js_unquote(token: str) -> str:
    body = token[1:-1]
    out: list[str] = []
    i = 0
    n = len(body)
    while i < n:
        c = body[i]
        if c == "\\" and i + 1 < n:
            e = body[i + 1]
            if e == "u" and i + 5 < n:
                try:
                    out.append(chr(int(body[i + 2:i + 6], 16)))
                    i += 6
                    continue
                except ValueError:
                    pass
            if e == "x" and i + 3 < n:
                try:
                    out.append(chr(int(body[i + 2:i + 4], 16)))
                    i += 4
                    continue
                except ValueError:
                    pass
            out.append(_ESCAPES.get(e, e))
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


# -- tolerant JSON -------------------------------------------------------------

_BARE_KEY = re.compile(r"([{,]\s*)([A-Za-z_$][\w$]*)(\s*:)")
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def loads_loose(text: str) -> Any:
    """Decode a JS object/array literal: canonical JSON first, then a
    normalization pass for single quotes, unquoted keys, comments, and
    trailing commas. Raises ValueError when still undecodable."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    normalized = _normalize_js_literal(text)
    try:
        return json.loads(normalized)
    except json.JSONDecodeError as exc:
        raise ValueError(f"unparseable JS literal: {exc}") from exc


def _normalize_js_literal(text: str) -> str:
    """Rewrite a JS literal into JSON, leaving string contents untouched."""
    out: list[str] = []
    i = 0
    n = len(text)
    code_start = 0

    def flush_code(upto: int):
        segment = text[code_start:upto]
        segment = _BARE_KEY.sub(lambda m: f'{m.group(1)}"{m.group(2)}"{m.group(3)}', segment)
        out.append(segment)

    while i < n:
        c = text[i]
        if c in "'\"":
            flush_code(i)
            end = _skip_string(text, i)
            out.append(json.dumps(_js_unquote(text[i:end])))
            i = end
            code_start = i
            continue
        if c == "/" and i + 1 < n and text[i + 1] in "/*":
            flush_code(i)
            if text[i + 1] == "/":
                j = text.find("\n", i)
                i = n if j == -1 else j + 1
            else:
                j = text.find("*/", i + 2)
                i = n if j == -1 else j + 2
            code_start = i
            continue
        i += 1
    flush_code(n)
    joined = "".join(out)
    return _TRAILING_COMMA.sub(r"\1", joined)


# -- argument interpretation -----------------------------------------------------


def _interpret(token: str) -> tuple[str, Any]:
    """Classify one argument: ('str'|'bool'|'json'|'raw', value)."""
    token = token.strip()
    if not token:
        return "raw", token
    if token[0] in "'\"":
        return "str", _js_unquote(token)
    if token == "true":
        return "bool", True
    if token == "false":
        return "bool", False
    if token.isdigit():
        return "str", token
    if token[0] in "[{":
        try:
            return "json", loads_loose(token)
        except ValueError:
            return "raw", token
    return "raw", token


def _collect_values(node: Any, out: list[str]) -> None:
    """Gather every string under a `value` key, depth-first."""
    if isinstance(node, dict):
        for k, v in node.items():
            if k == "value" and isinstance(v, str):
                out.append(v)
            else:
                _collect_values(v, out)
    elif isinstance(node, list):
        for item in node:
            _collect_values(item, out)


# -- main entry ------------------------------------------------------------------


def parse_config_script(script: bytes | str,
                        expected_pixel_id: Optional[str] = None) -> ParseResult:
    """Parse a configuration script into a PixelConfiguration.

    Tolerates arbitrary bytes: undecodable input is decoded lossily, junk
    payloads land in aux_sets with diagnostics. Raises
    NoRegisterPluginRegion when no structured call is present at all.
    """
    text = script.decode("utf-8", errors="replace") if isinstance(script, bytes) else script
    calls = _scan_calls(text)
    if not calls:
        raise NoRegisterPluginRegion("no structured configuration calls found")

    diags: list[Diagnostic] = []
    cfg = PixelConfiguration(pixel_id=expected_pixel_id or "")

    for call in calls:
        if call.head == "instance.optIn":
            _fold_opt_in(cfg, call, expected_pixel_id, diags)
        elif call.head == "config.set":
            _fold_config_set(cfg, call, expected_pixel_id, diags)
        else:
            _fold_fbq_set(cfg, call, expected_pixel_id, diags)

    if not cfg.pixel_id:
        diags.append(Diagnostic("warn", "no pixel id found in any structured call"))
    if cfg.selected_match_keys and cfg.opt_ins.get("AutomaticMatching") is not True:
        diags.append(Diagnostic(
            "warn", "selectedMatchKeys present without an AutomaticMatching opt-in"))
    return ParseResult(config=cfg, diagnostics=diags)


def _note_pixel_id(cfg: PixelConfiguration, pid: Any,
                   expected: Optional[str], diags: list[Diagnostic]) -> None:
    if not isinstance(pid, str) or not pid:
        return
    if expected is not None and pid != expected:
        diags.append(Diagnostic("warn", f"call references pixel {pid}, expected {expected}"))
        return
    if not cfg.pixel_id:
        cfg.pixel_id = pid
    elif cfg.pixel_id != pid:
        diags.append(Diagnostic(
            "warn", f"multiple pixel ids in one script: {cfg.pixel_id} and {pid}"))


def _fold_opt_in(cfg: PixelConfiguration, call: _Call,
                 expected: Optional[str], diags: list[Diagnostic]) -> None:
    if len(call.args) < 3:
        diags.append(Diagnostic("warn", f"optIn with {len(call.args)} args skipped"))
        return
    _, pid = _interpret(call.args[0])
    name_kind, name = _interpret(call.args[1])
    val_kind, val = _interpret(call.args[2])
    _note_pixel_id(cfg, pid, expected, diags)
    if name_kind != "str" or not isinstance(name, str):
        diags.append(Diagnostic("warn", f"optIn with non-literal name {call.args[1]!r}"))
        return
    if val_kind != "bool":
        diags.append(Diagnostic(
            "warn", f"optIn({name}) third argument {call.args[2]!r} is not a boolean literal"))
        cfg.aux_sets.setdefault("unresolved_opt_ins", {})[name] = call.args[2]
        return
    cfg.opt_ins[name] = bool(val)


def _fold_config_set(cfg: PixelConfiguration, call: _Call,
                     expected: Optional[str], diags: list[Diagnostic]) -> None:
    if len(call.args) < 3:
        diags.append(Diagnostic("warn", f"config.set with {len(call.args)} args skipped"))
        return
    _, pid = _interpret(call.args[0])
    _, name = _interpret(call.args[1])
    payload_kind, payload = _interpret(call.args[2])
    _note_pixel_id(cfg, pid, expected, diags)
    if not isinstance(name, str):
        name = str(name)
    if payload_kind == "raw":
        diags.append(Diagnostic("warn", f"config.set({name}) payload kept raw"))
        cfg.aux_sets[name] = {"raw": payload}
        return
    lowered = name.lower()
    if lowered == "unwanteddata":
        _fold_unwanted(cfg, payload, diags)
    elif lowered == "automaticmatching":
        _fold_matching(cfg, payload, diags)
    else:
        cfg.aux_sets[name] = payload


def _fold_fbq_set(cfg: PixelConfiguration, call: _Call,
                  expected: Optional[str], diags: list[Diagnostic]) -> None:
    if len(call.args) < 3:
        diags.append(Diagnostic("warn", f"fbq.set with {len(call.args)} args skipped"))
        return
    _, name = _interpret(call.args[0])
    _, pid = _interpret(call.args[1])
    payload_kind, payload = _interpret(call.args[2])
    _note_pixel_id(cfg, pid, expected, diags)
    if not isinstance(name, str):
        name = str(name)
    if payload_kind == "raw":
        diags.append(Diagnostic("warn", f"fbq.set({name}) payload kept raw"))
        cfg.aux_sets[name] = {"raw": payload}
        return
    if name.lower() == "estrules" and isinstance(payload, list):
        _fold_est_rules(cfg, payload, diags)
    else:
        cfg.aux_sets[name] = payload


def _fold_unwanted(cfg: PixelConfiguration, payload: Any, diags: list[Diagnostic]) -> None:
    if not isinstance(payload, dict):
        diags.append(Diagnostic("warn", "unwantedData payload is not an object"))
        cfg.aux_sets["unwantedData"] = payload
        return
    for src_key, dest in (("blacklisted_keys", cfg.unwanted_data.blacklisted),
                          ("sensitive_keys", cfg.unwanted_data.sensitive)):
        section = payload.get(src_key)
        if section is None:
            continue
        if not isinstance(section, dict):
            diags.append(Diagnostic("warn", f"{src_key} is not an object"))
            continue
        hashed = src_key == "sensitive_keys"
        for event, rules in section.items():
            if not isinstance(rules, dict):
                diags.append(Diagnostic("warn", f"{src_key}[{event}] is not an object"))
                continue
            sets = dest.setdefault(event, KeySets())
            for channel in ("cd", "url"):
                values = rules.get(channel)
                if values is None:
                    continue
                if not isinstance(values, list):
                    diags.append(Diagnostic(
                        "warn", f"{src_key}[{event}].{channel} is not an array"))
                    continue
                for value in values:
                    if not isinstance(value, str):
                        diags.append(Diagnostic(
                            "warn", f"{src_key}[{event}].{channel} has non-string entry"))
                        continue
                    if hashed:
                        value = _validated_digest(value, event, channel, diags)
                        if value is None:
                            continue
                    getattr(sets, channel).add(value)
    extra = {k: v for k, v in payload.items()
             if k not in ("blacklisted_keys", "sensitive_keys")}
    if extra:
        cfg.aux_sets.setdefault("unwantedData_extra", {}).update(extra)


def _validated_digest(value: str, event: str, channel: str,
                      diags: list[Diagnostic]) -> Optional[str]:
    if _HEX64.match(value):
        return value
    if _HEX64_ANYCASE.match(value):
        diags.append(Diagnostic(
            "info", f"sensitive key for {event}.{channel} lowercased from mixed case"))
        return value.lower()
    diags.append(Diagnostic(
        "warn", f"rejected malformed sensitive key for {event}.{channel}: {value!r}"))
    return None


def _fold_matching(cfg: PixelConfiguration, payload: Any, diags: list[Diagnostic]) -> None:
    if not isinstance(payload, dict):
        diags.append(Diagnostic("warn", "automaticMatching payload is not an object"))
        cfg.aux_sets["automaticMatching"] = payload
        return
    keys = payload.get("selectedMatchKeys", [])
    if not isinstance(keys, list):
        diags.append(Diagnostic("warn", "selectedMatchKeys is not an array"))
        keys = []
    for key in keys:
        if key in MATCH_KEYS:
            if key not in cfg.selected_match_keys:
                cfg.selected_match_keys.append(key)
        else:
            diags.append(Diagnostic("warn", f"unknown match key {key!r}"))
            cfg.aux_sets.setdefault("unknown_match_keys", []).append(key)
    extra = {k: v for k, v in payload.items() if k != "selectedMatchKeys"}
    if extra:
        cfg.aux_sets.setdefault("automaticMatching_extra", {}).update(extra)


def _fold_est_rules(cfg: PixelConfiguration, payload: list, diags: list[Diagnostic]) -> None:
    for entry in payload:
        if not isinstance(entry, dict):
            diags.append(Diagnostic("warn", "estRules entry is not an object"))
            continue
        derived = entry.get("derived_event_name")
        rule_id = entry.get("rule_id")
        if not derived or not isinstance(derived, str):
            diags.append(Diagnostic("warn", "estRules entry missing derived_event_name"))
            continue
        if not isinstance(rule_id, str) or not rule_id.isdigit():
            diags.append(Diagnostic(
                "warn", f"estRules entry for {derived} has malformed rule_id {rule_id!r}"))
            continue
        condition = entry.get("condition")
        values: list[str] = []
        _collect_values(condition, values)
        cfg.est_rules.append(EstRule(
            condition=condition,
            trigger_values=values,
            derived_event_name=derived,
            rule_id=rule_id,
        ))


# -- feature projection ------------------------------------------------------------


def config_feature_vector(cfg: PixelConfiguration) -> dict[str, bool]:
    """Project a configuration onto the adoption-analysis feature flags."""
    def on(name: str) -> bool:
        return cfg.opt_ins.get(name) is True

    has_blacklisted = any(ks.cd or ks.url for ks in cfg.unwanted_data.blacklisted.values())
    has_sensitive = any(ks.cd or ks.url for ks in cfg.unwanted_data.sensitive.values())
    vector: dict[str, bool] = {
        "opt_automatic_setup": on("AutomaticSetup"),
        "opt_inferred_events": on("InferredEvents"),
        "automatic_events": on("AutomaticSetup") or on("InferredEvents"),
        "microdata_capable": on("AutomaticSetup"),
        "button_click_capable": on("AutomaticSetup") or on("InferredEvents"),
        "event_setup_tool": bool(cfg.est_rules),
        "first_party_cookies": on("FirstPartyCookies"),
        "advanced_matching": on("AutomaticMatching"),
        "unwanted_data": has_blacklisted or has_sensitive,
        "unwanted_data_blacklisted": has_blacklisted,
        "unwanted_data_sensitive": has_sensitive,
        "core_setup": on("ProtectedDataMode"),
    }
    for key in MATCH_KEYS:
        vector[f"match_key_{key}"] = key in cfg.selected_match_keys
    return vector


FEATURE_NAMES = tuple(config_feature_vector(PixelConfiguration(pixel_id="0")).keys())
