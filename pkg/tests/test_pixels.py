from hypothesis import given, settings, strategies as st

from pixeldig.pixels import (
    evidence_matches,
    extract_pixel_ids,
    is_valid_pixel_id,
    strip_archive_rewrites,
)

BASE_SNIPPET = b"""
<script>
!function(f,b,e,v,n,t,s){if(f.fbq)return;n=f.fbq=function(){n.callMethod?
n.callMethod.apply(n,arguments):n.queue.push(arguments)};
}(window, document,'script','https://connect.facebook.net/en_US/fbevents.js');
fbq('init', '1234567891234567');
fbq('track', 'PageView');
</script>
"""


class TestStripArchiveRewrites:
    def test_plain_prefix_removed(self):
        html = b'src="https://web.archive.org/web/2020/https://connect.facebook.net/x.js"'
        assert strip_archive_rewrites(html) == b'src="https://connect.facebook.net/x.js"'

    def test_modifier_prefix_removed(self):
        html = b'src="https://web.archive.org/web/20200101000000js_/https://connect.facebook.net/x.js"'
        assert strip_archive_rewrites(html) == b'src="https://connect.facebook.net/x.js"'

    def test_protocol_relative_prefix_removed(self):
        html = b'src="//web.archive.org/web/20200101000000im_/https://a.com/p.gif"'
        assert strip_archive_rewrites(html) == b'src="https://a.com/p.gif"'

    def test_untouched_without_prefixes(self):
        html = b"<html><body>no archive urls here</body></html>"
        assert strip_archive_rewrites(html) == html


class TestExtractPixelIds:
    def test_init_call(self):
        ids, evidence = extract_pixel_ids(BASE_SNIPPET)
        assert ids == {"1234567891234567"}
        assert any(e.kind == "fbq_init" for e in evidence)

    def test_no_pixel(self):
        ids, evidence = extract_pixel_ids(b"<html><p>just a page</p></html>")
        assert ids == set()
        assert evidence == []

    def test_init_and_noscript_image(self):
        html = (b"<script>fbq('init', '111111111111111');</script>"
                b'<noscript><img src="https://www.facebook.com/tr?id=222222222222222'
                b'&ev=PageView&noscript=1"/></noscript>')
        ids, evidence = extract_pixel_ids(html)
        assert ids == {"111111111111111", "222222222222222"}
        kinds = {e.pixel_id: e.kind for e in evidence}
        assert kinds["111111111111111"] == "fbq_init"
        assert kinds["222222222222222"] == "tr_pixel_url"

    def test_config_script_url(self):
        html = b'<script src="https://connect.facebook.net/signals/config/333333333333333?v=2.9.57"></script>'
        ids, evidence = extract_pixel_ids(html)
        assert ids == {"333333333333333"}
        assert evidence[0].kind == "config_script_url"

    def test_double_quotes_and_whitespace(self):
        html = b'fbq ( "init" ,\n\t"444444444444444" , {} );'
        ids, _ = extract_pixel_ids(html)
        assert ids == {"444444444444444"}

    def test_commented_out_flagged(self):
        html = (b"<!-- <script>fbq('init', '555555555555555');</script> -->"
                b"<script>fbq('init', '666666666666666');</script>")
        ids, evidence = extract_pixel_ids(html)
        assert ids == {"555555555555555", "666666666666666"}
        flags = {e.pixel_id: e.in_comment for e in evidence}
        assert flags["555555555555555"] is True
        assert flags["666666666666666"] is False

    def test_id_length_bounds(self):
        html = (b"fbq('init', '1234');"            # too short
                b"fbq('init', '123456789012345678901');"  # too long
                b"fbq('init', '12345');")           # minimum length
        ids, _ = extract_pixel_ids(html)
        assert ids == {"12345"}

    def test_evidence_offsets_recheckable(self):
        html = BASE_SNIPPET + b'<img src="https://www.facebook.com/tr?id=999999999999999&ev=X">'
        _, evidence = extract_pixel_ids(html)
        assert evidence
        for ev in evidence:
            assert evidence_matches(html, ev)

    def test_determinism(self):
        for _ in range(3):
            assert extract_pixel_ids(BASE_SNIPPET) == extract_pixel_ids(BASE_SNIPPET)

    def test_strip_then_extract_archived_body(self):
        html = (b'<script async src="https://web.archive.org/web/20200101000000js_/'
                b'https://connect.facebook.net/signals/config/777777777777777?v=2"></script>')
        ids, _ = extract_pixel_ids(strip_archive_rewrites(html))
        assert ids == {"777777777777777"}


@settings(max_examples=200)
@given(
    pid=st.text(alphabet="0123456789", min_size=5, max_size=20),
    quote=st.sampled_from(["'", '"']),
    space=st.sampled_from(["", " ", "  ", "\n", "\t"]),
    prefix=st.text(
        alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="fbq"),
        max_size=30),
)
def test_extraction_robust_to_formatting(pid, quote, space, prefix):
    snippet = f"{prefix}<script>fbq({space}{quote}init{quote},{space}{quote}{pid}{quote});</script>"
    ids, _ = extract_pixel_ids(snippet.encode("utf-8", errors="ignore"))
    assert pid in ids


def test_is_valid_pixel_id():
    assert is_valid_pixel_id("1234567891234567")
    assert is_valid_pixel_id("12345")
    assert not is_valid_pixel_id("1234")
    assert not is_valid_pixel_id("1" * 21)
    assert not is_valid_pixel_id("12a45")
    assert not is_valid_pixel_id("")
