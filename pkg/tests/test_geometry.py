import math

import numpy as np
import pytest

from frgd.geometry import (IFSModel, Similitude, apply, canonical_key, cluster_points,
                           compose, fixed_point, from_params, identity, invert, match_points)

from conftest import bundle, random_similitude


def close(a, b, tol=1e-10):
    return np.allclose(a.linear, b.linear, atol=tol) and np.allclose(a.translation, b.translation,
                                                                     atol=tol)


def test_identity_compose():
    s = from_params(0.4, 30, False, [1, 2])
    assert close(compose(identity(), s), s)
    assert close(compose(s, identity()), s)


def test_ratio_multiplies():
    s = compose(from_params(0.5), from_params(1 / 3))
    assert s.ratio == pytest.approx(1 / 6, abs=1e-15)


def test_compose_applies_right_first():
    a = from_params(0.5, translate=[1, 0])
    b = from_params(1.0, 90)
    p = np.array([1.0, 0.0])
    assert np.allclose(apply(compose(a, b), p), apply(a, apply(b, p)))


def test_compose_matches_hand_matrix_sg_open():
    ifs = bundle("sg_open").model.ifs
    f1, f2 = ifs.maps[0], ifs.maps[1]
    c = compose(f2, f1)
    # F2(F1 x) = A2 (A1 x + t1) + t2
    assert np.allclose(c.linear, f2.linear @ f1.linear)
    assert np.allclose(c.translation, f2.linear @ f1.translation + f2.translation)


def test_invert(rng):
    assert close(invert(identity()), identity())
    s = invert(from_params(1 / 3))
    assert s.ratio == pytest.approx(3.0)
    assert np.allclose(s.translation, 0)
    for _ in range(50):
        s = random_similitude(rng)
        assert close(compose(invert(s), s), identity())
        assert close(compose(s, invert(s)), identity())
        assert close(invert(invert(s)), s)
        assert invert(s).ratio == pytest.approx(1 / s.ratio, rel=1e-12)


def test_associativity_and_ratio(rng):
    for _ in range(50):
        a, b, c = (random_similitude(rng) for _ in range(3))
        assert close(compose(compose(a, b), c), compose(a, compose(b, c)))
        assert compose(a, b).ratio == pytest.approx(a.ratio * b.ratio, rel=1e-12)


def test_apply_scales_distances(rng):
    s = random_similitude(rng)
    p, q = rng.normal(size=2), rng.normal(size=2)
    d = np.linalg.norm(apply(s, p) - apply(s, q))
    assert d == pytest.approx(s.ratio * np.linalg.norm(p - q), abs=1e-12)
    assert np.allclose(apply(identity(), [1, 2]), [1, 2])


def test_vicsek_first_map_fixes_corner():
    f1 = bundle("vicsek_overlap").model.ifs.maps[0]
    assert np.allclose(apply(f1, [0, 0]), [0, 0])
    assert np.allclose(fixed_point(f1), [0, 0])


def test_contraction_toward_point():
    q5, q2 = np.array([0.5, 0.5]), np.array([1.0, 0.0])
    h = compose(from_params(1.0, translate=q5), compose(from_params(1 / 3), from_params(1.0, translate=-q5)))
    assert np.allclose(apply(h, q2), q5 + (q2 - q5) / 3)


def test_conformal_required():
    with pytest.raises(ValueError):
        Similitude(np.array([[1.0, 0], [0, 2.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        Similitude(np.zeros((2, 2)), np.zeros(2))


def test_canonical_key():
    s = from_params(0.3, 123, True, [0.2, -1])
    assert canonical_key(s) == canonical_key(from_params(0.3, 123, True, [0.2, -1]))
    assert canonical_key(s) == canonical_key(from_params(0.3, 123 - 360, True, [0.2, -1]))
    moved = Similitude(s.linear, s.translation + [1e-5, 0])
    assert canonical_key(moved) != canonical_key(s)


def test_canonical_key_coincident_words():
    # in the overlapping Vicsek IFS, F1 F3 and F5 F1 are the same map
    ifs = bundle("vicsek_overlap").model.ifs
    a, b = ifs.word_map((0, 2)), ifs.word_map((4, 0))
    assert canonical_key(a) == canonical_key(b)
    assert canonical_key(a) != canonical_key(ifs.word_map((0, 1)))


def test_ifs_model():
    ifs = IFSModel([from_params(0.5), from_params(0.25, translate=[1, 0])])
    assert ifs.n == 2 and ifs.min_ratio == 0.25
    with pytest.raises(ValueError):
        IFSModel([from_params(0.5)])
    with pytest.raises(ValueError):
        IFSModel([from_params(0.5), from_params(1.0)])


def test_cluster_and_match():
    pts = np.array([[0, 0], [1e-12, 0], [1, 0], [1, 1e-11]])
    reps, lab = cluster_points(pts, 1e-9)
    assert len(reps) == 2 and lab.tolist() == [0, 0, 1, 1]
    assert match_points([[1, 0], [5, 5]], reps).tolist() == [1, -1]
