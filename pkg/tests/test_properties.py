import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from partshare.analysis import box_agreement, importance_histogram
from partshare.boosting import fit_tree, update_weights
from partshare.formats import decode_features, encode_features
from partshare.fusion import power_normalize
from partshare.metrics import compute_ap
from partshare.part_model import ImagePartSet, encode_image
from partshare.sampling import saturation_error
from partshare.synthgen import brute_force_stump

finite = st.floats(-10, 10, allow_nan=False, width=64)
positive = st.floats(1e-6, 1e3, allow_nan=False)
coord = st.integers(0, 50)


@st.composite
def rects(draw):
    x0, y0 = draw(coord), draw(coord)
    return (x0, y0, x0 + draw(st.integers(1, 30)), y0 + draw(st.integers(1, 30)))


@given(arrays(np.float64, st.integers(1, 30), elements=positive))
def test_power_normalize_is_a_flatter_distribution(w):
    p = power_normalize(w)
    assert np.all(p >= 0) and math.isclose(p.sum(), 1.0, abs_tol=1e-12)
    assert p.var() <= (w / w.sum()).var() + 1e-15


@given(arrays(np.float64, st.integers(1, 20), elements=positive), st.floats(0.05, 3.0))
def test_power_normalize_keeps_order(w, alpha):
    p = power_normalize(w, alpha)
    order = np.argsort(w, kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-15)


@given(rects(), rects())
def test_agreement_bounds(part, box):
    a = box_agreement(part, box)
    assert 0.0 <= a <= 1.0
    assert box_agreement(part, part) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 25), st.integers(1, 6))
def test_stump_matches_brute_force(seed, n, m):
    rng = np.random.default_rng(seed)
    r = rng.integers(0, 5, (n, m)).astype(float)  # coarse values force threshold ties
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    w = rng.random(n) + 1e-3
    w /= w.sum()
    tree, eps = fit_tree(r, y, w, range(m), depth=1)
    part, thr, err = brute_force_stump(r, y, w)
    if part is None:
        assert tree.node_count == 1 and eps == err
    else:
        assert (int(tree.feature[0]), float(tree.threshold[0]), eps) == (part, thr, err)


@given(st.integers(0, 10**6), st.integers(1, 30), st.floats(-5, 5))
def test_weight_update_is_a_distribution(seed, n, alpha):
    rng = np.random.default_rng(seed)
    w = rng.random(n) + 1e-3
    w /= w.sum()
    out = update_weights(w, rng.choice([-1.0, 1.0], n), rng.choice([-1.0, 1.0], n), alpha)
    assert math.isclose(out.sum(), 1.0, rel_tol=1e-12) and np.all(out > 0)


@given(st.integers(0, 10**6), st.integers(1, 12), st.integers(1, 4))
def test_saturation_error_is_a_rate(seed, n, num_cat):
    rng = np.random.default_rng(seed)
    y = rng.choice([-1, 1], (n, num_cat))
    s = rng.choice([-2.0, -1.0, 1.0, 2.0], (n, num_cat))
    e = saturation_error(s, y)
    assert 0.0 <= e <= 1.0
    # without zero scores, flipping every vote flips every mistake
    assert math.isclose(saturation_error(-s, y) + e, 1.0, abs_tol=1e-12)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 5), st.floats(0.01, 100))
def test_encoding_monotone_and_scale_covariant(seed, num_parts, num_det, c):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((num_det, 4))
    parts = rng.standard_normal((num_parts + 1, 4))
    small = ImagePartSet.from_array("a", parts[:-1], normalize=False)
    big = ImagePartSet.from_array("a", parts, normalize=False)
    r_small = encode_image(w, small).responses
    assert np.all(encode_image(w, big).responses >= r_small - 1e-12)
    np.testing.assert_allclose(encode_image(c * w, small).responses, c * r_small, rtol=1e-12, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.integers(0, 10**6))
def test_ap_range_and_perfect_ranking(scores, seed):
    rng = np.random.default_rng(seed)
    y = rng.choice([-1, 1], scores.size)
    y[0] = 1
    ap = compute_ap(scores, y)
    assert 0.0 < ap <= 1.0
    perfect = np.where(y > 0, 1.0, 0.0)
    assert compute_ap(perfect, y) == 1.0


@given(arrays(np.float32, st.tuples(st.integers(0, 8), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)), st.booleans())
def test_feature_file_round_trip(v, with_boxes):
    boxes = np.arange(v.shape[0] * 4).reshape(-1, 4) if with_boxes else None
    ff = decode_features(encode_features(v, boxes))
    np.testing.assert_array_equal(ff.vectors, v)
    if with_boxes:
        np.testing.assert_array_equal(ff.boxes, boxes)
    else:
        assert ff.boxes is None


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 1), st.sampled_from(["own", "other", "context"])),
                min_size=1, max_size=30), st.integers(2, 60))
def test_histogram_conserves_importance(items, bins):
    imp, agr, lab = zip(*items)
    hist = importance_histogram(imp, agr, bins, lab)
    assert len(hist) == bins
    assert math.isclose(sum(h.total for h in hist), math.fsum(imp), rel_tol=1e-9, abs_tol=1e-12)
