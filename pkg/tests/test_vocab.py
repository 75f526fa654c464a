"""Tokenizer and vocabulary contract."""

import numpy as np
import pytest

from cocite.vocab import (
    PAD,
    UNK,
    CLS,
    SEP,
    RESERVED,
    UnknownDomainError,
    Vocabulary,
    build_vocabulary,
    domain_token,
    tokenize,
)


def make_vocab():
    return build_vocabulary(
        ["heart disease risk", "lung airway decline", "heart lung disease"],
        vocab_size=32,
        domains=["cvd", "copd"],
    )


def test_reserved_tokens_present_and_dense():
    v = make_vocab()
    assert [v.tokens[i] for i in range(4)] == [PAD, UNK, CLS, SEP]
    ids = [v.id_of(t) for t in v.tokens]
    assert ids == list(range(len(v.tokens)))


def test_domain_tokens_registered():
    v = make_vocab()
    assert v.domain_token_id("cvd") != v.domain_token_id("copd")
    assert domain_token("cvd") == "[CVD]"
    assert v.tokens[v.domain_token_id("cvd")] == "[CVD]"


def test_unknown_domain_raises():
    v = make_vocab()
    with pytest.raises(UnknownDomainError) as err:
        v.domain_token_id("renal")
    assert "renal" in str(err.value)


def test_vocab_cap_keeps_most_frequent():
    texts = ["a a a b b c"]
    v = build_vocabulary(texts, vocab_size=6, domains=[])
    # 4 reserved + 2 slots: the two most frequent words
    assert len(v.tokens) == 6
    assert "a" in v.tokens and "b" in v.tokens and "c" not in v.tokens


def test_tokenize_prepends_domain_token():
    v = make_vocab()
    seq = tokenize("heart disease", v, max_seq_len=8, domain="cvd")
    assert seq.ids[0] == v.domain_token_id("cvd")
    assert seq.ids[1] == v.id_of("heart")
    assert seq.mask[:3].tolist() == [1, 1, 1]


def test_tokenize_defaults_to_cls():
    v = make_vocab()
    seq = tokenize("heart", v, max_seq_len=4)
    assert seq.ids[0] == v.cls_id


def test_tokenize_empty_text():
    v = make_vocab()
    seq = tokenize("", v, max_seq_len=4)
    assert seq.ids.tolist() == [v.cls_id, v.pad_id, v.pad_id, v.pad_id]
    assert seq.mask.tolist() == [1, 0, 0, 0]


def test_tokenize_pads_and_truncates_to_exact_length():
    v = make_vocab()
    for text in ["", "heart", "heart disease risk lung airway decline heart lung"]:
        seq = tokenize(text, v, max_seq_len=4)
        assert seq.ids.shape == (4,)
        assert seq.mask.shape == (4,)
    long = tokenize("heart disease risk lung airway", v, max_seq_len=4)
    assert long.mask.tolist() == [1, 1, 1, 1]


def test_tokenize_unknown_word_maps_to_unk():
    v = make_vocab()
    seq = tokenize("zzzz heart", v, max_seq_len=6)
    assert seq.ids[1] == v.unk_id
    assert seq.ids[2] == v.id_of("heart")


def test_tokenize_lowercases():
    v = make_vocab()
    a = tokenize("HEART Disease", v, max_seq_len=6)
    b = tokenize("heart disease", v, max_seq_len=6)
    assert np.array_equal(a.ids, b.ids)


def test_tokenize_unknown_domain_raises():
    v = make_vocab()
    with pytest.raises(UnknownDomainError):
        tokenize("heart", v, max_seq_len=4, domain="renal")


def test_word_ids_drops_specials_and_unknown():
    v = make_vocab()
    ids = v.word_ids("heart zzzz disease")
    assert v.unk_id not in ids
    assert ids == [v.id_of("heart"), v.id_of("disease")]


def test_special_ids_cover_reserved_and_domains():
    v = make_vocab()
    specials = v.special_ids()
    for t in RESERVED:
        assert v.id_of(t) in specials
    assert v.domain_token_id("cvd") in specials
    assert v.id_of("heart") not in specials


def test_round_trip_dict():
    v = make_vocab()
    w = Vocabulary.from_dict(v.to_dict())
    assert w.tokens == v.tokens
    assert w.domain_tokens == v.domain_tokens


def test_sep_reserved_but_unused_in_sequences():
    v = make_vocab()
    seq = tokenize("heart disease", v, max_seq_len=8)
    assert v.id_of(SEP) not in seq.ids.tolist()
