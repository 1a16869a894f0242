import json

import numpy as np
import pytest

from frgd.errors import ResourceLimitError
from frgd.geometry import from_params, invert, compose
from frgd.overlap import (OverlapOracle, WordTable, audit_json, dedup_words, max_chain_length,
                          neighbor_maps, propose_decomposition)
from frgd.structure import check_boundary_consistency, validate_construction

from conftest import bundle


def ifs(name):
    return bundle(name).model.ifs


def test_word_table_order_and_prefix():
    tab = WordTable(ifs("sg"), 3)
    assert len(tab) == 1 + 3 + 9 + 27
    words = [tab.word(i) for i in range(len(tab))]
    assert words[0] == () and words[1:4] == [(0,), (1,), (2,)]
    for i in (5, 17, 30):
        assert np.allclose(tab.map(i).linear, ifs("sg").word_map(words[i]).linear)
        assert np.allclose(tab.map(i).translation, ifs("sg").word_map(words[i]).translation)
    i, j = words.index((1,)), words.index((1, 2, 0))
    assert tab.is_prefix([i], [j])[0] and not tab.is_prefix([j], [i])[0]
    assert not tab.is_prefix([words.index((2,))], [j])[0]
    with pytest.raises(ResourceLimitError):
        WordTable(ifs("sg"), 9)


def test_dedup_keeps_smallest_word():
    tab = WordTable(ifs("vicsek_overlap"), 2)
    idx = np.nonzero(tab.length == 2)[0]
    kept = [tab.word(i) for i in dedup_words(tab, idx, OverlapOracle(ifs("vicsek_overlap")))]
    assert (0, 2) in kept and (4, 0) not in kept
    assert len(kept) == 24


def test_oracle_relations():
    o = OverlapOracle(ifs("sg"))
    touch = o.relation(*_rel(ifs("sg"), (0,), (1,)))
    assert touch.touch and not touch.fat
    far = o.relation(np.eye(2) * 0.5, np.array([5.0, 5.0]))
    assert not far.touch
    inner = o.relation(*_rel(ifs("sg"), (), (0,)))
    assert inner.fat and inner.inside and not inner.outside


def _rel(f, w, u):
    h = compose(invert(f.word_map(w)), f.word_map(u))
    return h.linear, h.translation


def test_sg_audits_finite():
    nm = neighbor_maps(ifs("sg"), 3)
    assert nm.verdict == "finite-evidence" and nm.counts == {1: 6, 2: 6, 3: 6}
    ch = max_chain_length(ifs("sg"), 0.5, 3)
    assert ch.verdict == "finite-evidence" and set(ch.lengths.values()) == {1}


def test_neighbor_counts_invariant_under_rigid_motion():
    g = from_params(1.0, 37.0, True, [2.0, -1.0])
    a = neighbor_maps(ifs("sg_open"), 3).counts
    b = neighbor_maps(ifs("sg_open").conjugate(g), 3).counts
    assert a == b


def test_chain_witnesses_satisfy_window():
    f = ifs("golden_sg")
    delta = f.min_ratio
    ch = max_chain_length(f, delta, 3)
    for d, words in ch.witnesses.items():
        r = np.array([f.word_map(w).ratio for w in words])
        assert r.min() / r.max() >= delta * (1 - 1e-9)
        for a in words:
            for b in words:
                assert a == b or a[:len(b)] != b
    assert ch.lengths[3] > ch.lengths[1]


def test_input_checks():
    with pytest.raises(ValueError):
        max_chain_length(ifs("sg"), 1.5, 2)
    with pytest.raises(ValueError):
        neighbor_maps(ifs("sg"), 0)
    with pytest.raises(ResourceLimitError):
        neighbor_maps(ifs("sg"), 9)
    with pytest.raises(ValueError):
        propose_decomposition(ifs("sg"), 0.2, 0.4)


def test_sg_decomposition_is_canonical():
    dec = propose_decomposition(ifs("sg"), 0.5, 0.25)
    assert dec.success and len(dec.types) == 1 and dec.child_counts() == [[3]]
    m = dec.model(ifs=ifs("sg"))
    assert validate_construction(m.g).valid
    assert check_boundary_consistency(m, 2).ok
    ref = bundle("sg").model
    got = sorted(map(tuple, np.round(m.vertices(0, False), 9)))
    assert got == sorted(map(tuple, np.round(ref.vertices(0, False), 9)))


@pytest.mark.parametrize("name", ["vicsek_overlap", "sg_open"])
def test_overlapping_decompositions_are_consistent(name):
    dec = propose_decomposition(ifs(name), 0.5, 1 / 3)
    assert dec.success and len(dec.types) == 2
    m = dec.model(ifs=ifs(name))
    assert validate_construction(m.g).valid
    assert check_boundary_consistency(m, 2).ok


def test_reports_serialize():
    nm = neighbor_maps(ifs("sg"), 2)
    ch = max_chain_length(ifs("sg"), 0.5, 2)
    doc = json.loads(audit_json(nm, ch))
    assert [d["kind"] for d in doc] == ["neighbor_maps", "chains"]
    assert "finite-evidence" in str(nm) and "depth 2" in str(ch)
