import random

import pytest

from pixeldig.cracker import (
    EmptyDictionary,
    build_dictionary,
    crack,
    generate_variants,
    sha256_hex,
    split_words,
)


class TestVariants:
    def test_camel_case_entry(self):
        variants = generate_variants("searchTerm")
        for expected in ("searchterm", "search_term", "search-term"):
            assert expected in variants
        assert "searchTerm" not in variants  # the entry itself is not a variant

    def test_snake_case_entry_gets_camel(self):
        variants = generate_variants("search_term")
        assert "searchTerm" in variants
        assert "searchterm" in variants

    def test_prefix_suffix_forms(self):
        variants = generate_variants("search")
        assert "txtSearch" in variants
        assert "searchId" in variants
        assert "searchstr" in variants

    def test_split_words(self):
        assert split_words("searchTerm") == ["search", "Term"]
        assert split_words("search_term-x") == ["search", "term", "x"]
        assert split_words("HTTPSProxy") == ["HTTPS", "Proxy"]


class TestBuildDictionary:
    def test_empty_inputs_raise(self, tmp_path):
        empty = tmp_path / "empty.txt"
        empty.write_text("\n# comment only\n")
        with pytest.raises(EmptyDictionary):
            build_dictionary([empty], [])

    def test_wordlist_and_observed_sources(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("gender\nsearchTerm\n")
        dictionary = build_dictionary([wl], {"lat", "lng"})
        assert dictionary.lookup(sha256_hex("gender")) == ("gender", "wordlist")
        assert dictionary.lookup(sha256_hex("lat")) == ("lat", "observed_blacklisted")
        assert dictionary.lookup(sha256_hex("search_term"))[1] == "variant"

    def test_observed_keys_crackable_without_wordlist(self):
        dictionary = build_dictionary([], {"lat", "lng"})
        results, rate = crack({sha256_hex("lat"), sha256_hex("lng")}, dictionary)
        assert rate == 1.0


class TestCrack:
    def test_known_word_cracked(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("gender\n")
        dictionary = build_dictionary([wl], [])
        results, rate = crack({sha256_hex("gender")}, dictionary)
        assert rate == 1.0
        assert results[0].plaintext == "gender"
        assert results[0].verify()

    def test_random_digest_uncracked(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("gender\n")
        dictionary = build_dictionary([wl], [])
        random_digest = sha256_hex("".join(random.Random(7).choices("abcdef0123456789", k=32)))
        results, rate = crack({random_digest}, dictionary)
        assert rate == 0.0
        assert results[0].plaintext is None

    def test_partial_coverage_rate(self, tmp_path):
        words = [f"uniqkey{i:02d}" for i in range(10)]
        wl = tmp_path / "wl.txt"
        wl.write_text("\n".join(words[:7]))
        dictionary = build_dictionary([wl], [])
        results, rate = crack({sha256_hex(w) for w in words}, dictionary)
        assert rate == pytest.approx(0.7)

    def test_soundness_every_result_rehashes(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("gender\nsearchTerm\nlocationName\nq\n")
        dictionary = build_dictionary([wl], {"lat"})
        digests = {sha256_hex(w) for w in
                   ("gender", "searchterm", "search_term", "lat", "q", "missing-one")}
        results, _ = crack(digests, dictionary)
        assert all(r.verify() for r in results)

    def test_monotonicity_bigger_dictionary_never_worse(self, tmp_path):
        words = [f"key{i}" for i in range(20)]
        digests = {sha256_hex(w) for w in words}
        small = tmp_path / "small.txt"
        small.write_text("\n".join(words[:5]))
        big = tmp_path / "big.txt"
        big.write_text("\n".join(words[:15]))
        _, small_rate = crack(digests, build_dictionary([small], []))
        _, big_rate = crack(digests, build_dictionary([big], []))
        assert big_rate >= small_rate

    def test_self_consistency_oracle(self, tmp_path):
        rng = random.Random(42)
        words = sorted({"".join(rng.choices("abcdefghijklmnop", k=10)) for _ in range(100)})
        wl = tmp_path / "wl.txt"
        wl.write_text("\n".join(words))
        dictionary = build_dictionary([wl], [])
        _, rate = crack({sha256_hex(w) for w in words}, dictionary)
        assert rate == 1.0

    def test_malformed_digest_rejected(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("gender\n")
        dictionary = build_dictionary([wl], [])
        with pytest.raises(ValueError):
            crack({"not-a-digest"}, dictionary)

    def test_hash_input_encoding_is_exact_utf8(self):
        # no trailing newline, exact bytes
        assert sha256_hex("") == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
        assert sha256_hex("gender") != sha256_hex("gender\n")
