import json

import pytest
from hypothesis import given, settings, strategies as st

from pixeldig.configscript import (
    MATCH_KEYS,
    NoRegisterPluginRegion,
    PixelConfiguration,
    config_feature_vector,
    loads_loose,
    parse_config_script,
)

SAMPLE_DIGEST = "d3857b12b4ceacfe82b2c2ea9980a79ea829f4ecb593abc45574c60b9c88b2fc"


def parse_fixture(fixtures_dir, name, pixel_id=None):
    return parse_config_script((fixtures_dir / name).read_bytes(), pixel_id)


class TestSampleSnippets:
    def test_opt_in_snippet(self, fixtures_dir):
        result = parse_fixture(fixtures_dir, "sample_optin.js")
        assert result.config.pixel_id == "1234567891234567"
        assert result.config.opt_ins == {"UnwantedData": True}

    def test_unwanted_data_snippet(self, fixtures_dir):
        result = parse_fixture(fixtures_dir, "sample_unwanted_data.js")
        rules = result.config.unwanted_data
        assert rules.blacklisted["ViewContent"].cd == {"em"}
        assert rules.blacklisted["ViewContent"].url == {"lat", "lng"}
        assert rules.sensitive["PageView"].cd == {SAMPLE_DIGEST}
        assert any(d.startswith("d3857b12b4cea") for d in rules.sensitive["PageView"].cd)

    def test_est_rules_snippet(self, fixtures_dir):
        result = parse_fixture(fixtures_dir, "sample_est_rules.js")
        rules = result.config.est_rules
        assert len(rules) == 1
        assert rules[0].derived_event_name == "SubmitApplication"
        assert rules[0].rule_id == "3690133590227007"
        assert "Submit my portfolio" in rules[0].trigger_values

    def test_matching_snippet(self, fixtures_dir):
        result = parse_fixture(fixtures_dir, "sample_matching.js")
        assert result.config.selected_match_keys == list(MATCH_KEYS)
        # the snippet carries no opt-in call, so the parser warns
        assert any("AutomaticMatching" in d.message for d in result.warnings())


class TestScanner:
    def test_no_structured_calls_raises(self):
        with pytest.raises(NoRegisterPluginRegion):
            parse_config_script(b"var x = 1; function noop() { return x; }")

    def test_call_inside_string_ignored(self):
        script = (b'var s = "instance.optIn(\\"1\\", \\"Fake\\", true);";\n'
                  b'instance.optIn("123456789012345", "FirstPartyCookies", true);')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"FirstPartyCookies": True}

    def test_call_inside_comments_ignored(self):
        script = (b"// instance.optIn(\"1\", \"A\", true);\n"
                  b"/* config.set(\"1\", \"b\", {}); */\n"
                  b'instance.optIn("123456789012345", "InferredEvents", true);')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"InferredEvents": True}

    def test_regex_literal_with_quotes_tolerated(self):
        script = (b'!function(){var g=/["\']/g,h=/x(/;}();\n'
                  b'instance.optIn("123456789012345", "AutomaticSetup", true);')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"AutomaticSetup": True}

    def test_minified_single_line(self):
        script = (b'var a=1;instance.optIn("123456789012345","AutomaticSetup",true);'
                  b'instance.optIn("123456789012345","InferredEvents",true);var b=2;')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"AutomaticSetup": True, "InferredEvents": True}

    def test_lookalike_identifier_not_matched(self):
        script = (b'myconfig.set("1", "x", {});\n'
                  b'instance.optIn("123456789012345", "AutomaticSetup", true);')
        result = parse_config_script(script)
        assert "x" not in result.config.aux_sets

    def test_nested_payload_brackets(self):
        script = ('config.set("123456789012345", "custom", '
                  '{"a": [1, [2, {"b": "c,d)"}]], "e": "(("}); ').encode()
        result = parse_config_script(script)
        assert result.config.aux_sets["custom"] == {"a": [1, [2, {"b": "c,d)"}]], "e": "(("}


class TestOptIn:
    def test_non_literal_boolean_flagged(self):
        script = b'instance.optIn("123456789012345", "AutomaticSetup", !0);'
        result = parse_config_script(script)
        assert "AutomaticSetup" not in result.config.opt_ins
        assert result.config.aux_sets["unresolved_opt_ins"]["AutomaticSetup"] == "!0"
        assert result.warnings()

    def test_false_literal(self):
        script = b'instance.optIn("123456789012345", "AutomaticSetup", false);'
        result = parse_config_script(script)
        assert result.config.opt_ins == {"AutomaticSetup": False}

    def test_unexpected_pixel_id_flagged(self):
        script = b'instance.optIn("999999999999999", "AutomaticSetup", true);'
        result = parse_config_script(script, expected_pixel_id="123456789012345")
        assert result.config.pixel_id == "123456789012345"
        assert result.config.opt_ins == {"AutomaticSetup": True}
        assert any("999999999999999" in d.message for d in result.warnings())


class TestUnwantedData:
    def test_truncated_digest_rejected_with_diagnostic(self):
        script = ('config.set("123456789012345", "unwantedData", '
                  '{"sensitive_keys": {"PageView": {"cd": ["d3857b12b4cea..."]}}});').encode()
        result = parse_config_script(script)
        assert result.config.unwanted_data.sensitive.get("PageView").cd == set()
        assert any("d3857b12b4cea" in d.message for d in result.warnings())

    def test_uppercase_digest_normalized(self):
        digest = SAMPLE_DIGEST.upper()
        script = (f'config.set("123456789012345", "unwantedData", '
                  f'{{"sensitive_keys": {{"PageView": {{"url": ["{digest}"]}}}}}});').encode()
        result = parse_config_script(script)
        assert result.config.unwanted_data.sensitive["PageView"].url == {SAMPLE_DIGEST}

    def test_single_quoted_payload(self):
        script = (b"config.set('123456789012345', 'unwantedData', "
                  b"{'blacklisted_keys': {'Lead': {'url': ['q']}}});")
        result = parse_config_script(script)
        assert result.config.unwanted_data.blacklisted["Lead"].url == {"q"}

    def test_unquoted_keys_payload(self):
        script = (b'config.set("123456789012345", "unwantedData", '
                  b'{blacklisted_keys: {Search: {cd: ["term"], url: []}}});')
        result = parse_config_script(script)
        assert result.config.unwanted_data.blacklisted["Search"].cd == {"term"}

    def test_malformed_payload_degrades_to_aux(self):
        script = b'config.set("123456789012345", "unwantedData", {this is not json]});'
        result = parse_config_script(script)
        assert "unwantedData" in result.config.aux_sets
        assert result.warnings()

    def test_non_array_channel_not_exploded(self):
        script = (b'config.set("123456789012345", "unwantedData", '
                  b'{"blacklisted_keys": {"Lead": {"cd": "em", "url": ["q"]}}});')
        result = parse_config_script(script)
        assert result.config.unwanted_data.blacklisted["Lead"].cd == set()
        assert result.config.unwanted_data.blacklisted["Lead"].url == {"q"}
        assert any("not an array" in d.message for d in result.warnings())


class TestAuxSets:
    def test_unknown_config_name_preserved(self):
        script = (b'config.set("123456789012345", "customConversions", '
                  b'[{"rule": {"url": "contains", "value": "/thanks"}}]);')
        result = parse_config_script(script)
        assert result.config.aux_sets["customConversions"] == [
            {"rule": {"url": "contains", "value": "/thanks"}}]

    def test_unknown_fbq_set_name_preserved(self):
        script = b'fbq.set("experiments", "123456789012345", {"holdout": 0.1});'
        result = parse_config_script(script)
        assert result.config.aux_sets["experiments"] == {"holdout": 0.1}


class TestEstRules:
    def test_malformed_rule_id_skipped(self):
        script = (b'fbq.set("estRules", "123456789012345", '
                  b'[{"condition": {}, "derived_event_name": "Lead", "rule_id": "abc"}]);')
        result = parse_config_script(script)
        assert result.config.est_rules == []
        assert result.warnings()

    def test_trigger_values_collected_recursively(self):
        script = (b'fbq.set("estRules", "123456789012345", [{"condition": '
                  b'{"or": [{"conditions": [{"value": "Buy now"}, {"value": "Checkout"}]},'
                  b' {"value": "Order"}]}, '
                  b'"derived_event_name": "Purchase", "rule_id": "42"}]);')
        result = parse_config_script(script)
        assert result.config.est_rules[0].trigger_values == ["Buy now", "Checkout", "Order"]


class TestHostileInputs:
    def test_bom_crlf_and_high_bytes(self):
        script = (b"\xef\xbb\xbfvar z='caf\xe9';\r\n"
                  b'instance.optIn("123456789012345", "AutomaticSetup", true);\r\n')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"AutomaticSetup": True}

    def test_template_literal_decoys_ignored(self):
        script = (b"var tpl=`config.set(\"1\",\"fake\",{})`;\n"
                  b"var more=`instance.optIn('9','Nope',true)`;\n"
                  b'instance.optIn("123456789012345", "InferredEvents", true);')
        result = parse_config_script(script)
        assert result.config.opt_ins == {"InferredEvents": True}
        assert "fake" not in result.config.aux_sets

    def test_escaped_quotes_inside_payload_strings(self):
        script = (b'config.set("123456789012345", "custom", '
                  b'{"label": "say \\"hi\\", then leave", "n": 1});')
        result = parse_config_script(script)
        assert result.config.aux_sets["custom"]["label"] == 'say "hi", then leave'

    def test_unterminated_string_in_junk_degrades_gracefully(self):
        # an unterminated quote swallows the rest; no crash, no region found
        with pytest.raises(NoRegisterPluginRegion):
            parse_config_script(b"var broken = 'oops...\n"
                                b'instance.optIn("123456789012345", "A", true);')

    def test_deeply_nested_minified_wrapper(self):
        wrapper = (b"!function(a,b){for(var i=0;i<3;i++){a[i]=function(){return b+i}}}"
                   b"([],2);(function(){var s={a:{b:{c:[1,2,{d:'x'}]}}};return s})();")
        tail = (b'fbq.registerPlugin("123456789012345", {__fbEventsPlugin: 1, '
                b"plugin: function(fbq, instance, config) {"
                b'instance.optIn("123456789012345", "FirstPartyCookies", true);'
                b'config.set("123456789012345", "automaticMatching", '
                b'{"selectedMatchKeys": ["em", "ph"]});'
                b'instance.configLoaded("123456789012345");}});')
        result = parse_config_script(wrapper + tail)
        assert result.config.opt_ins == {"FirstPartyCookies": True}
        assert result.config.selected_match_keys == ["em", "ph"]


class TestRoundTrip:
    def test_serialize_parse_equality(self, fixtures_dir):
        for name in ("sample_optin.js", "sample_unwanted_data.js",
                     "sample_est_rules.js", "sample_matching.js"):
            cfg = parse_fixture(fixtures_dir, name).config
            again = PixelConfiguration.from_json(json.loads(json.dumps(cfg.to_json())))
            assert again == cfg

    def test_demo_scripts_round_trip(self):
        from pixeldig.demo_corpus import build_world, config_script_for

        world = build_world()
        seen = 0
        for site in world:
            for year, sy in site.years.items():
                for spec in sy.configs:
                    script = config_script_for(spec)
                    cfg = parse_config_script(script, spec.pixel_id).config
                    again = PixelConfiguration.from_json(cfg.to_json())
                    assert again == cfg
                    seen += 1
        assert seen > 50


# Self-contained minified-JS statements; any concatenation stays valid JS.
JS_ATOMS = [
    "var a=1;", "x||y;", "!function(){return 0}();", "for(var i=0;i<9;i++){z+=i};",
    "var s1='str(ing';", 'var s2="an)other";', "var re=/[\"'()]/g;", "a.b.c(1,2);",
    "q={k:[1,2,{m:'v'}]};", "//line comment\n", "/*block(comment)*/",
    "throw new Error('x');", "var t=`tpl${a}`;",
]


@settings(max_examples=150, deadline=None)
@given(junk=st.lists(st.sampled_from(JS_ATOMS), max_size=12))
def test_junk_prefix_never_changes_parse(junk):
    region = ('fbq.registerPlugin("123456789012345", {plugin: function(fbq, instance, config) {'
              'instance.optIn("123456789012345", "AutomaticSetup", true);'
              'config.set("123456789012345", "automaticMatching", {"selectedMatchKeys": ["em"]});'
              '}});')
    baseline = parse_config_script(region.encode()).config
    prefixed = parse_config_script(("".join(junk) + "\n" + region).encode()).config
    assert prefixed == baseline


class TestFeatureVector:
    def test_inferred_events_only(self):
        cfg = PixelConfiguration(pixel_id="1", opt_ins={"InferredEvents": True})
        fv = config_feature_vector(cfg)
        assert fv["automatic_events"] is True
        assert fv["button_click_capable"] is True
        assert fv["microdata_capable"] is False

    def test_empty_config_all_false(self):
        fv = config_feature_vector(PixelConfiguration(pixel_id="1"))
        assert all(v is False for v in fv.values())

    def test_core_setup_and_est_independent(self, fixtures_dir):
        result = parse_fixture(fixtures_dir, "sample_est_rules.js")
        cfg = result.config
        cfg.opt_ins["ProtectedDataMode"] = True
        fv = config_feature_vector(cfg)
        assert fv["core_setup"] is True
        assert fv["event_setup_tool"] is True

    def test_match_key_flags(self):
        cfg = PixelConfiguration(pixel_id="1", opt_ins={"AutomaticMatching": True},
                                 selected_match_keys=["em", "ph"])
        fv = config_feature_vector(cfg)
        assert fv["advanced_matching"] is True
        assert fv["match_key_em"] is True
        assert fv["match_key_ph"] is True
        assert fv["match_key_ge"] is False


class TestLoadsLoose:
    def test_canonical_json(self):
        assert loads_loose('{"a": 1}') == {"a": 1}

    def test_trailing_commas_and_comments(self):
        text = '{"a": [1, 2,], // note\n "b": {"c": 3,},}'
        assert loads_loose(text) == {"a": [1, 2], "b": {"c": 3}}

    def test_single_quotes_and_bare_keys(self):
        assert loads_loose("{a: 'x', b: ['y', 'z']}") == {"a": "x", "b": ["y", "z"]}

    def test_hopeless_input_raises(self):
        with pytest.raises(ValueError):
            loads_loose("{][}")
