import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from haartsvd.patches import (
    ConfigError,
    MatchConfig,
    PatchGroup,
    aggregate,
    extract_patches,
    gcp_distance,
    grid_positions,
    reference_grid,
    search_similar,
)


def scan(image, ref, cfg):
    """Exhaustive windowed search with an explicit sort key."""
    img = image if image.ndim == 3 else image[:, :, None]
    ps, (r, c) = cfg.ps, ref
    p0 = img[r : r + ps, c : c + ps]
    keyed = []
    for i in range(max(0, r - cfg.W), min(img.shape[0] - ps, r + cfg.W) + 1):
        for j in range(max(0, c - cfg.W), min(img.shape[1] - ps, c + cfg.W) + 1):
            d = gcp_distance(p0, img[i : i + ps, j : j + ps], cfg.gamma_gcp)
            keyed.append(((i, j) != (r, c), d, i, j))
    keyed.sort()
    return [(i, j) for _, _, i, j in keyed[: cfg.K]], [d for _, d, _, _ in keyed[: cfg.K]]


class TestConfig:
    def test_defaults(self):
        cfg = MatchConfig()
        assert (cfg.ps, cfg.K, cfg.W, cfg.stride, cfg.gamma_gcp) == (8, 32, 18, 4, 1.2)

    @pytest.mark.parametrize(
        "kw", [dict(ps=1), dict(K=24), dict(K=1), dict(W=4), dict(stride=0), dict(gamma_gcp=0.0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            MatchConfig(**kw)


class TestGCP:
    def test_identical(self, rng):
        p = rng.uniform(0, 255, (8, 8, 3))
        assert gcp_distance(p, p) == 0.0

    def test_green_branch_ignores_red(self, rng):
        pi = np.zeros((4, 4, 3))
        pi[:, :, 1] = rng.uniform(1, 255, (4, 4))
        pj = pi.copy()
        pj[:, :, 0] = 99.0
        assert gcp_distance(pi, pj) == 0.0

    def test_mean_branch(self):
        pi = np.zeros((2, 2, 3))
        pi[:, :, 0] = 10.0  # red dominates: green branch fails
        pi[:, :, 1] = 1.0
        pj = np.zeros((2, 2, 3))
        pj[:, :, 2] = 3.0
        # channel means: pi -> 11/3 everywhere, pj -> 1 everywhere; 4 pixels
        assert gcp_distance(pi, pj) == pytest.approx(2 * (11 / 3 - 1), abs=1e-12)

    def test_gamma_boundary(self):
        p = np.zeros((2, 2, 3))
        p[:, :, 0], p[:, :, 1] = 1.2, 1.0
        q = p.copy()
        q[:, :, 0] += 5.0
        assert gcp_distance(p, q, 1.2) == 0.0  # ||G|| == ||R|| / 1.2 keeps the green branch
        assert gcp_distance(p, q, 1.1) > 0.0

    def test_other_channel_counts_are_euclidean(self, rng):
        for c in (1, 2, 4):
            a, b = rng.standard_normal((5, 5, c)), rng.standard_normal((5, 5, c))
            assert gcp_distance(a, b) == pytest.approx(np.linalg.norm(a - b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gcp_distance(np.zeros((4, 4, 3)), np.zeros((4, 4, 1)))

    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_within_branch(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.uniform(0, 255, (4, 4, 3)), r.uniform(0, 255, (4, 4, 3))
        from haartsvd.patches import _green_dominant

        if _green_dominant(a, 1.2) == _green_dominant(b, 1.2):
            assert gcp_distance(a, b) == pytest.approx(gcp_distance(b, a), rel=1e-12)


class TestGrid:
    def test_flush_last(self):
        assert grid_positions(20, 8, 4).tolist() == [0, 4, 8, 12]
        assert grid_positions(21, 8, 4).tolist() == [0, 4, 8, 12, 13]
        assert grid_positions(8, 8, 4).tolist() == [0]

    def test_too_small(self):
        with pytest.raises(ValueError):
            grid_positions(5, 8, 4)

    @given(st.integers(8, 60), st.integers(8, 60), st.integers(2, 8), st.integers(1, 8))
    def test_full_coverage(self, h, w, ps, stride):
        stride = min(stride, ps)  # wider steps leave gaps by design
        refs = reference_grid((h, w), ps, stride)
        cover = np.zeros((h, w), bool)
        for r, c in refs:
            cover[r : r + ps, c : c + ps] = True
        assert cover.all()
        assert refs[:, 0].max() == h - ps and refs[:, 1].max() == w - ps


class TestSearch:
    def test_constant_image_raster_order(self):
        cfg = MatchConfig(ps=4, K=8, W=4)
        g = search_similar(np.full((20, 20, 3), 7.0), (6, 6), cfg)
        assert g.K == 8 and np.all(g.distances == 0)
        expected = [(6, 6), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6), (2, 7), (2, 8)]
        assert [tuple(m) for m in g.members] == expected

    def test_repeated_block(self, rng):
        img = rng.uniform(0, 255, (24, 24))
        img[14:18, 3:7] = img[2:6, 9:13]
        cfg = MatchConfig(ps=4, K=2, W=20)
        g = search_similar(img, (2, 9), cfg)
        assert [tuple(m) for m in g.members] == [(2, 9), (14, 3)]
        assert g.distances[1] == 0.0
        assert scan(img, (2, 9), cfg)[0] == [(2, 9), (14, 3)]

    def test_cyclic_padding(self):
        cfg = MatchConfig(ps=4, K=16, W=4)
        img = np.arange(36.0).reshape(6, 6)  # only 3 x 3 = 9 candidate positions
        g = search_similar(img, (1, 1), cfg)
        assert len(g.members) == 16
        first9 = [tuple(m) for m in g.members[:9]]
        assert len(set(first9)) == 9
        assert [tuple(m) for m in g.members[9:]] == first9[:7]

    def test_group_layout(self, rng):
        img = rng.uniform(0, 255, (30, 30, 3))
        cfg = MatchConfig(ps=5, K=4, W=6)
        g = search_similar(img, (10, 12), cfg)
        assert isinstance(g, PatchGroup) and g.data.shape == (5, 5, 3, 4)
        for k, (r, c) in enumerate(g.members):
            np.testing.assert_array_equal(g.data[..., k], img[r : r + 5, c : c + 5])

    def test_rejects_outside_reference(self):
        with pytest.raises(ValueError):
            search_similar(np.zeros((10, 10)), (5, 5), MatchConfig(ps=8, K=2, W=8))

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from([2, 4, 8, 16]))
    def test_matches_exhaustive_scan(self, seed, c, k):
        r = np.random.default_rng(seed)
        img = r.integers(0, 4, (18, 18, c)).astype(float) * 40  # many exact ties
        cfg = MatchConfig(ps=4, K=k, W=5)
        ref = tuple(int(x) for x in r.integers(0, 15, 2))
        g = search_similar(img, ref, cfg)
        members, dists = scan(img, ref, cfg)
        assert [tuple(m) for m in g.members] == members
        np.testing.assert_allclose(g.distances, dists, atol=1e-9)
        assert tuple(g.members[0]) == ref and g.distances[0] == 0
        assert np.all(np.diff(g.distances[: len(members)]) >= -1e-9)


class TestAggregate:
    @staticmethod
    def group_at(members, ps, c):
        members = np.asarray(members)
        return PatchGroup(np.zeros((ps, ps, c, len(members))), members, np.zeros(len(members)))

    def test_non_overlapping_verbatim(self, rng):
        g = self.group_at([(0, 0), (0, 4), (4, 0), (4, 4)], 4, 3)
        data = rng.standard_normal((4, 4, 3, 4))
        out = aggregate([(g, data)], (8, 8, 3))
        for k, (r, c) in enumerate(g.members):
            np.testing.assert_array_equal(out[r : r + 4, c : c + 4], data[..., k])

    def test_equal_overlap(self):
        a = self.group_at([(0, 0)], 4, 1)
        b = self.group_at([(2, 2)], 4, 1)
        out = aggregate([(a, np.full((4, 4, 1, 1), 5.0)), (b, np.full((4, 4, 1, 1), 5.0))], (6, 6))
        assert out[3, 3] == 5.0 and out.shape == (6, 6)

    def test_uncovered_from_fallback(self):
        g = self.group_at([(0, 0)], 2, 1)
        fb = np.full((4, 4), 9.0)
        out = aggregate([(g, np.ones((2, 2, 1, 1)))], (4, 4), fallback=fb)
        assert out[0, 0] == 1.0 and out[3, 3] == 9.0

    def rand_estimates(self, r, h, w, c, ps):
        ests = []
        for _ in range(r.integers(1, 5)):
            k = int(r.integers(1, 6))
            members = np.stack([r.integers(0, h - ps + 1, k), r.integers(0, w - ps + 1, k)], 1)
            ests.append((self.group_at(members, ps, c), r.standard_normal((ps, ps, c, k))))
        return ests

    @given(st.integers(0, 2**32 - 1))
    def test_matches_naive_accumulation(self, seed):
        r = np.random.default_rng(seed)
        h, w, c, ps = 12, 10, 2, 3
        ests = self.rand_estimates(r, h, w, c, ps)
        sums, counts = np.zeros((h, w, c)), np.zeros((h, w))
        for g, data in ests:
            for k, (i, j) in enumerate(g.members):
                for a in range(ps):
                    for b in range(ps):
                        sums[i + a, j + b] += data[a, b, :, k]
                        counts[i + a, j + b] += 1
        fb = r.standard_normal((h, w, c))
        expect = fb.copy()
        hit = counts > 0
        expect[hit] = sums[hit] / counts[hit][:, None]
        np.testing.assert_allclose(aggregate(ests, (h, w, c), fallback=fb), expect, atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
    def test_linear(self, seed, alpha):
        r = np.random.default_rng(seed)
        ests = self.rand_estimates(r, 9, 9, 1, 3)
        base = aggregate(ests, (9, 9))
        scaled = aggregate([(g, alpha * d) for g, d in ests], (9, 9))
        np.testing.assert_allclose(scaled, alpha * base, atol=1e-12)

    def test_rejects_non_finite(self):
        g = self.group_at([(0, 0)], 2, 1)
        with pytest.raises(ValueError):
            aggregate([(g, np.full((2, 2, 1, 1), np.nan))], (4, 4))


def test_extract_patches_shape(rng):
    img = rng.standard_normal((10, 11, 3))
    out = extract_patches(img, np.array([[[0, 0], [2, 3]]]), 4)
    assert out.shape == (1, 2, 3, 4, 4)
    np.testing.assert_array_equal(out[0, 1], np.transpose(img[2:6, 3:7], (2, 0, 1)))
