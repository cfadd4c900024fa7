import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cffont.cluster import FontContentProfile, profile_from_images
from cffont.errors import ShapeMismatchError, ValidationError
from cffont.fusion import (DEFAULT_TAU, FusionWeights, fuse_content, fusion_weights, one_hot_weights,
                           read_weights, weight_report, weights_from_distances)
from cffont.glyphgen import SyntheticFontSpec, default_alphabet, render_glyph
from cffont.toymodel import init_params


def prof(font_id, values):
    return FontContentProfile(font_id, np.asarray(values, dtype=np.float64))


def oracle_weights(d, tau):
    # plain-python softmax of -(d / mean(d)) / tau
    mean = sum(d) / len(d)
    z = [-(x / mean) / tau for x in d]
    top = max(z)
    e = [math.exp(v - top) for v in z]
    return [v / sum(e) for v in e]


def test_equal_distances_give_exactly_uniform():
    for m in (2, 3, 7, 10):
        for tau in (1e-4, 0.3, 5.0):
            w = weights_from_distances(np.full(m, 2.5), tau)
            assert np.all(w == 1.0 / m)


def test_closed_form_two_thirds():
    # normalized distances (0, ln 2) need raw distances with that ratio to the mean
    x = math.log(2)
    # d / mean(d) = (0, 2): choose tau so that -2 / tau = -ln 2
    w = weights_from_distances([0.0, 1.0], tau=2 / x)
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    w = weights_from_distances([0.0, x], tau=1.0, normalize=False)
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_random_cases_simplex_and_oracle_1000():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 12))
        d = rng.uniform(0.0, 50.0, m)
        tau = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        w = weights_from_distances(d, tau)
        assert np.all(w >= 0.0)
        assert abs(w.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(w, oracle_weights(list(d), tau), rtol=1e-9, atol=1e-300)


def test_small_tau_is_one_hot_at_argmin_1000():
    rng = np.random.default_rng(1)
    tau, separated = 1e-4, 0
    for _ in range(1000):
        m = int(rng.integers(2, 12))
        d = rng.uniform(0.0, 50.0, m)
        w = weights_from_distances(d, tau)
        assert int(np.argmax(w)) == int(np.argmin(d))
        np.testing.assert_allclose(w, oracle_weights(list(d), tau), rtol=1e-9, atol=1e-300)
        # a runner-up within tau*ln(999(m-1)) of the minimum cannot be pushed below 0.001
        gap = np.diff(np.sort(d / d.mean())[:2])[0]
        if gap >= tau * math.log(999 * (m - 1)):
            separated += 1
            assert w.max() >= 0.999
    assert separated >= 950


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_argmax_invariant_to_distance_scaling(seed, c):
    d = np.random.default_rng(seed).uniform(0.1, 10.0, 6)
    assert np.argmax(weights_from_distances(d)) == np.argmax(weights_from_distances(c * d))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.floats(1e-3, 10.0))
def test_strictly_decreasing_in_distance(seed, tau):
    d = np.random.default_rng(seed).uniform(0.1, 10.0, 5)
    w = weights_from_distances(d, tau)
    order = np.argsort(d)
    ds, ws = d[order], w[order]
    for i in range(4):
        if ds[i] < ds[i + 1]:
            assert ws[i] >= ws[i + 1]
            if ws[i + 1] > 0:
                assert ws[i] > ws[i + 1] or ws[i] == 1.0


def test_target_equal_to_basis_is_strict_max():
    rng = np.random.default_rng(2)
    basis = [prof(f"b{i}", rng.normal(size=20)) for i in range(5)]
    for tau in (1e-3, 0.3, 100.0):
        fw = fusion_weights(prof("t", basis[3].concatenated), basis, tau)
        assert fw.distances[3] == 0.0
        assert fw.argmax() == 3
        assert all(fw.weights[3] > fw.weights[j] for j in range(5) if j != 3)


def test_fusion_weights_distances_are_l1():
    rng = np.random.default_rng(3)
    t = prof("t", rng.normal(size=8))
    basis = [prof(f"b{i}", rng.normal(size=8)) for i in range(3)]
    fw = fusion_weights(t, basis)
    for i, b in enumerate(basis):
        assert abs(fw.distances[i] - sum(abs(x - y) for x, y in zip(t.concatenated, b.concatenated))) <= 1e-12
    assert fw.tau == DEFAULT_TAU


def test_fusion_weight_errors():
    t = prof("t", [1.0, 2.0])
    with pytest.raises(ValidationError):
        fusion_weights(t, [], 0.3)
    with pytest.raises(ValidationError):
        fusion_weights(t, [prof("b", [1.0, 0.0])], 0.0)
    with pytest.raises(ValidationError):
        weights_from_distances([1.0, 2.0], -1.0)
    with pytest.raises(ValidationError):
        weights_from_distances([], 1.0)
    with pytest.raises(ShapeMismatchError):
        fusion_weights(t, [prof("b", [1.0])], 0.3)


def test_fuse_one_hot_copies_basis_feature():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(4, 6))
    w = np.zeros(4)
    w[2] = 1.0
    np.testing.assert_array_equal(fuse_content(w, feats), feats[2])


def test_fuse_uniform_pair_is_midpoint():
    a, b = np.array([0.0, 1.0, -2.0]), np.array([4.0, 1.0, 2.0])
    np.testing.assert_array_equal(fuse_content(np.array([0.5, 0.5]), np.stack([a, b])), (a + b) / 2)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fused_feature_inside_envelope(seed):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(5, 3, 7))
    w = weights_from_distances(rng.uniform(0.1, 5.0, 5), 0.5)
    out = fuse_content(w, feats)
    assert out.shape == (3, 7)
    assert np.all(out >= feats.min(axis=0) - 1e-12) and np.all(out <= feats.max(axis=0) + 1e-12)


def test_same_weights_reused_for_every_character():
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(3, 4, 5))
    fw = FusionWeights("t", np.array([0.2, 0.5, 0.3]), 0.3)
    out = fuse_content(fw, feats)
    for ch in range(4):
        np.testing.assert_allclose(out[ch], fuse_content(fw.weights, feats[:, ch]), rtol=0, atol=0)


def test_fuse_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        fuse_content(np.array([0.5, 0.5]), np.zeros((3, 4)))


def test_one_hot_weights_pick_nearest():
    fw = FusionWeights("t", np.array([0.3, 0.3, 0.4]), 0.3, np.array([2.0, 1.0, 3.0]))
    oh = one_hot_weights(fw)
    np.testing.assert_array_equal(oh.weights, [0.0, 1.0, 0.0])
    with pytest.raises(ValidationError):
        one_hot_weights(FusionWeights("t", np.ones(2) / 2, 0.3))


def test_report_entropy_limits_and_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    basis = [prof(f"b{i}", rng.normal(size=10)) for i in range(4)]
    on_basis = fusion_weights(prof("t0", basis[1].concatenated), basis, 1e-4)
    uniform = FusionWeights("t1", weights_from_distances(np.ones(4)), 0.3)
    assert on_basis.entropy() <= 1e-6
    assert abs(uniform.entropy() - math.log(4)) <= 1e-12
    ids = [b.font_id for b in basis]
    text = weight_report([on_basis, uniform], ids, tmp_path / "w.tsv")
    lines = text.splitlines()
    assert lines[0].split("\t") == ["font_id", "w_b0", "w_b1", "w_b2", "w_b3", "entropy", "argmax"]
    assert lines[1].split("\t")[-1] == "b1"
    read_ids, table = read_weights(tmp_path / "w.tsv")
    assert read_ids == ids
    np.testing.assert_array_equal(table["t0"], on_basis.weights)
    np.testing.assert_array_equal(table["t1"], uniform.weights)
    with pytest.raises(ShapeMismatchError):
        weight_report([uniform], ids[:3])
    (tmp_path / "bad.tsv").write_text("x\n")
    with pytest.raises(ValidationError):
        read_weights(tmp_path / "bad.tsv")


def test_mid_thickness_font_weights_its_two_neighbours():
    size = 24
    skels = default_alphabet()[:16]
    params = init_params(size, size, 16, 4, seed=0)

    def font(fid, thick, slant=0.0):
        spec = SyntheticFontSpec(fid, stroke_thickness=thick, slant=slant, jitter_amount=0.0)
        return profile_from_images(params, fid, np.stack([render_glyph(spec, s, size).flat() for s in skels]))

    basis = [font("thin", 2.0), font("thick", 5.0), font("slant_l", 3.5, -0.4), font("slant_r", 3.5, 0.4)]
    fw = fusion_weights(font("mid", 3.5 - 0.25), basis[:2] + basis[2:], 0.3)
    top2 = set(np.argsort(fw.weights)[-2:])
    assert top2 == {0, 1}
