import random

import pytest
from oracles import count_substring, http_counts_oracle

from soar import corpus
from soar.http_ids import (
    ATTACKS, DEFAULT_TOKENS, EXCLUDED, HttpIds, TokenFeatureSpec, classify_request, extract_http_features,
)
from soar.learners import ClassifierModel, UntrainedModel
from soar.packets import HttpRequest


def counts(raw, attack, token=None):
    spec = TokenFeatureSpec.default(attack)
    vec = extract_http_features(raw, spec).counts
    return vec if token is None else vec[spec.tokens.index(token)]


def test_benign_text_is_all_zero_for_sqli():
    assert sum(counts("GET /?q=hello", "SQLI")) == 0


def test_repeated_union_select():
    raw = "GET /item?id=1 union select a from b union select c HTTP/1.1"
    assert counts(raw, "SQLI", "union") == 2 == count_substring(raw, "union")


def test_single_decode_pass_before_counting():
    assert counts("%3Cscript%3E", "XSS", "<script") == 1
    assert counts("%253Cscript%253E", "XSS", "<script") == 0


def test_counting_is_case_insensitive():
    assert counts("GET /?q=<ScRiPt>AlErT(1)</SCRIPT>", "XSS", "<script") == 1


def test_request_objects_and_strings_agree():
    raw = "GET /?cmd=cat%20/etc/hosts;ls HTTP/1.1\r\n\r\n"
    req = HttpRequest(0.0, "1.2.3.4", "GET", "/", "cmd=cat%20/etc/hosts;ls", "", raw)
    spec = TokenFeatureSpec.default("OSC")
    assert extract_http_features(req, spec).counts == extract_http_features(raw, spec).counts


_ALPHABET = list("abcdefghijklmnopqrstuvwxyzABCDEF0123456789 <>'\";|&$(){}=/-%#.!?*\\\r\n\t")


def _fuzz(rng: random.Random) -> str:
    parts = []
    pieces = [t for a in ATTACKS for t in DEFAULT_TOKENS[a]] + [t for a in ATTACKS for t in EXCLUDED[a]]
    for _ in range(rng.randint(0, 12)):
        r = rng.random()
        if r < 0.35:
            tok = rng.choice(pieces)
            parts.append("".join(c.upper() if rng.random() < 0.3 else c for c in tok))
        elif r < 0.5:
            parts.append("%" + rng.choice("0123456789abcdefABCDEFgz") + rng.choice("0123456789abcdefXY"))
        elif r < 0.55:
            parts.append("%" + "".join(rng.choice("0123456789ABCDEF") for _ in range(2)) * rng.randint(1, 3))
        else:
            parts.append("".join(rng.choice(_ALPHABET) for _ in range(rng.randint(1, 8))))
    return "".join(parts)


def test_extraction_matches_naive_counter_on_10k_fuzzed_requests():
    rng = random.Random(20240611)
    specs = {a: TokenFeatureSpec.default(a) for a in ATTACKS}
    for _ in range(10_000):
        raw = _fuzz(rng)
        for a, spec in specs.items():
            assert extract_http_features(raw, spec).counts == http_counts_oracle(raw, spec.tokens), (a, raw)


def test_excluded_tokens_never_become_features():
    for a in ATTACKS:
        spec = TokenFeatureSpec.default(a)
        assert not set(spec.tokens) & set(EXCLUDED[a])
        assert set(EXCLUDED[a]) <= set(spec.excluded)


def test_user_tokens_lose_excluded_entries():
    spec = TokenFeatureSpec("XSS", ("<script", "createElement", "alert("), ("createelement",))
    assert spec.tokens == ("<script", "alert(")
    with pytest.raises(ValueError):
        TokenFeatureSpec("SQLI", (";",), (";",))
    with pytest.raises(ValueError):
        TokenFeatureSpec("CSRF", ("x",))


def test_spec_serialization_roundtrip():
    for a in ATTACKS:
        spec = TokenFeatureSpec.default(a)
        assert TokenFeatureSpec.from_dict(spec.to_dict()) == spec
        assert list(spec.to_dict()) == ["attack", "version", "tokens", "excluded"]


# -- classification with the bundled models ------------------------------------------


def test_benign_get_is_clean(models):
    ids = models[0]
    assert ids.classify("GET /index.html HTTP/1.1\r\nHost: shop.local\r\n\r\n") == set()


def test_classic_payloads(models):
    ids = models[0]
    assert "SQLI" in ids.classify("GET /item?id=1'; DROP TABLE users;-- HTTP/1.1\r\n\r\n")
    assert "XSS" in ids.classify("GET /search?q=<script>alert(1)</script> HTTP/1.1\r\n\r\n")
    assert "OSC" in ids.classify("GET /ping?host=127.0.0.1;cat /etc/shadow HTTP/1.1\r\n\r\n")


def test_held_out_synthetic_benign_rows_are_clean(models):
    ids = models[0]
    rows = corpus.http_rows(seed=99, sizes={"benign": 300, "xss": 100, "sqli": 100, "osc": 100})
    benign = [raw for label, raw in rows if label == "benign"]
    flagged = sum(bool(ids.classify(raw)) for raw in benign)
    assert flagged / len(benign) <= 0.01


def test_untrained_models_raise():
    empty = ClassifierModel("DECISION_TREE", ["x"], ["numeric"], {0: 1.0, 1: 1.0}, {})
    with pytest.raises(UntrainedModel):
        classify_request("GET / HTTP/1.1", {a: empty for a in ATTACKS})
    with pytest.raises(UntrainedModel):
        classify_request("GET / HTTP/1.1", {})


def test_ids_bundle_roundtrip(models, tmp_path):
    ids = models[0]
    ids.save(tmp_path / "ids.json")
    again = HttpIds.load(tmp_path / "ids.json")
    raw = "GET /?q=%22%3E%3Csvg/onload=alert(1)%3E HTTP/1.1\r\n\r\n"
    assert again.classify(raw) == ids.classify(raw)


def test_corpus_attack_rows_carry_a_class_token():
    rows = corpus.http_rows(seed=3, sizes={"benign": 100, "xss": 200, "sqli": 200, "osc": 200})
    for label, raw in rows:
        if label != "benign":
            assert sum(counts(raw, label.upper())) >= 1, raw
