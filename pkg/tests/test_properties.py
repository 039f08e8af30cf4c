"""Randomized property tests for the label codec and statistics."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from motionsim.rigid import MetricConfig, RigidTransform, rms_deviation
from motionsim.softlabel import BinGrid, decode, encode, js_divergence, kl_divergence
from motionsim.stats import bh_fdr

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(
    score=st.floats(-2.0, 6.0),
    sigma=st.floats(0.01, 2.0),
)
@settings(max_examples=200, deadline=None)
def test_encode_is_a_distribution_and_decode_stays_on_grid(score, sigma):
    grid = BinGrid()
    probs = encode(score, sigma, grid)
    assert probs.shape == (grid.n_bins,)
    assert probs.min() >= 0.0
    assert abs(probs.sum() - 1.0) <= 1e-9
    decoded = decode(probs, grid)
    assert grid.centers[0] - 1e-9 <= decoded <= grid.centers[-1] + 1e-9


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_divergence_identities(data):
    n = data.draw(st.integers(2, 30))
    raw_p = np.array(data.draw(st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n)))
    raw_q = np.array(data.draw(st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n)))
    p = raw_p / raw_p.sum()
    q = raw_q / raw_q.sum()
    assert kl_divergence(p, q) >= -1e-12
    assert kl_divergence(p, p) == 0.0
    js = js_divergence(p, q)
    assert -1e-12 <= js <= np.log(2) + 1e-9
    assert abs(js - js_divergence(q, p)) <= 1e-12


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60))
@settings(max_examples=200, deadline=None)
def test_bh_fdr_bounds_and_dominance(pvals):
    p = np.array(pvals)
    q = bh_fdr(p)
    assert np.all(q >= p - 1e-15)
    assert np.all(q <= 1.0 + 1e-15)
    # adjusted values keep the sorted order of the raw values
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(q[order]) >= -1e-15)


@given(
    rot=st.tuples(*[st.floats(-30.0, 30.0)] * 3),
    trans=st.tuples(*[st.floats(-10.0, 10.0)] * 3),
)
@settings(max_examples=100, deadline=None)
def test_rms_deviation_nonnegative_and_zero_on_self(rot, trans):
    cfg = MetricConfig(brain_radius=80.0)
    t = RigidTransform(rot, trans)
    assert rms_deviation(t, t, cfg) <= 1e-8
    assert rms_deviation(RigidTransform(), t, cfg) >= 0.0
