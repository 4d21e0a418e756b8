import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beliefplan.belief import (
    DIAGONAL,
    ConstrainedBelief,
    GaussianBelief,
    Layout,
    clip_psd,
    devectorize,
    vectorize,
)
from conftest import random_spd


class TestGaussianBelief:
    def test_immutable(self):
        b = GaussianBelief([0.0, 1.0], np.eye(2))
        with pytest.raises(ValueError):
            b.mean[0] = 3.0

    def test_validity(self):
        assert GaussianBelief([0.0], [[1.0]]).is_valid()
        assert not GaussianBelief([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]]).is_valid()
        assert not GaussianBelief([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]).is_valid()

    def test_weight_bounds(self):
        g = GaussianBelief([0.0], [[1.0]])
        with pytest.raises(ValueError):
            ConstrainedBelief(g, g, 1.5)


class TestLayoutExamples:
    def test_full_1d_roundtrip(self):
        layout = Layout(1)
        v = vectorize(GaussianBelief([0.0], [[1.0]]), layout)
        np.testing.assert_array_equal(v, [0.0, 1.0])
        b = devectorize(v, layout)
        assert b.mean[0] == 0.0 and b.cov[0, 0] == 1.0

    def test_diagonal_layout(self):
        layout = Layout(2, DIAGONAL)
        v = vectorize(GaussianBelief([1.0, 2.0], np.diag([4.0, 9.0])), layout)
        np.testing.assert_array_equal(v, [1.0, 2.0, 4.0, 9.0])

    def test_grouped_hand_eye_size(self):
        groups = tuple((2 * j, 2 * j + 1) for j in range(1, 8))
        layout = Layout(16, DIAGONAL, groups)
        assert layout.size == 23

    def test_negative_variance_clamped(self):
        b = devectorize([0.0, -1e-15], Layout(1, DIAGONAL))
        assert b.cov[0, 0] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            vectorize(GaussianBelief([0.0, 0.0], np.eye(2)), Layout(3))
        with pytest.raises(ValueError):
            devectorize(np.zeros(4), Layout(2))

    def test_constrained_size(self):
        assert Layout(2, constrained=True).size == 11

    def test_kind_mismatch(self):
        g = GaussianBelief([0.0], [[1.0]])
        with pytest.raises(ValueError):
            vectorize(ConstrainedBelief(g, g, 0.5), Layout(1))


def test_clip_psd_repairs_negative_eigenvalue():
    C = np.array([[1.0, 2.0], [2.0, 1.0]])
    R = clip_psd(C)
    assert np.linalg.eigvalsh(R).min() >= -1e-12
    np.testing.assert_allclose(R, [[1.5, 1.5], [1.5, 1.5]])


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5), seed=st.integers(0, 2**31 - 1))
def test_full_roundtrip_random(n, seed):
    rng = np.random.default_rng(seed)
    b = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
    layout = Layout(n)
    back = devectorize(vectorize(b, layout), layout)
    np.testing.assert_allclose(back.mean, b.mean, rtol=1e-12)
    np.testing.assert_allclose(back.cov, b.cov, rtol=1e-12, atol=1e-12)
    assert back.is_valid()


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 2**31 - 1), w=st.floats(0, 1))
def test_constrained_roundtrip_random(n, seed, w):
    rng = np.random.default_rng(seed)
    layout = Layout(n, constrained=True)
    cb = ConstrainedBelief(
        GaussianBelief(rng.standard_normal(n), random_spd(rng, n)),
        GaussianBelief(rng.standard_normal(n), random_spd(rng, n)),
        w,
    )
    v = vectorize(cb, layout)
    back = devectorize(v, layout)
    np.testing.assert_allclose(vectorize(back, layout), v, rtol=1e-12, atol=1e-14)
    assert back.weight == pytest.approx(w)


@settings(max_examples=60, deadline=None)
@given(v=arrays(float, 6, elements=finite).map(lambda x: np.concatenate([x[:3], np.abs(x[3:])])))
def test_diagonal_vector_roundtrip(v):
    layout = Layout(3, DIAGONAL)
    np.testing.assert_allclose(vectorize(devectorize(v, layout), layout), v, rtol=1e-12)


def test_vectorize_injective_on_distinct_beliefs(rng):
    layout = Layout(3)
    vs = set()
    for _ in range(50):
        b = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
        vs.add(tuple(vectorize(b, layout)))
    assert len(vs) == 50


def test_batch_unpack_matches_single(rng):
    layout = Layout(3, constrained=True)
    X = np.stack([
        vectorize(ConstrainedBelief(GaussianBelief(rng.standard_normal(3), random_spd(rng, 3)),
                                    GaussianBelief(rng.standard_normal(3), random_spd(rng, 3)),
                                    rng.uniform()), layout)
        for _ in range(5)
    ])
    m1, c1, m2, c2, w = layout.unpack(X)
    for i in range(5):
        b = devectorize(X[i], layout)
        np.testing.assert_allclose(c1[i], b.free.cov)
        np.testing.assert_allclose(m2[i], b.surface.mean)
        assert w[i] == b.weight


def test_mixture_moments_match_object(rng):
    layout = Layout(2, constrained=True)
    cb = ConstrainedBelief(GaussianBelief([0.0, 1.0], np.eye(2)), GaussianBelief([2.0, 0.0], np.diag([1.0, 0.0])), 0.3)
    mean, cov = layout.mixture_moments(vectorize(cb, layout))
    g = cb.moments()
    np.testing.assert_allclose(mean, g.mean)
    np.testing.assert_allclose(cov, g.cov)
