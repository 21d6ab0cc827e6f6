"""Supervision sampling: density weights, weighted batch draws, determinism."""

import numpy as np
import pytest

from reliefsdf.sampling import (
    SampledSdf,
    build_sample_set,
    compute_density_weights,
    draw_batch,
    load_sampled_sdf,
    save_sampled_sdf,
)


def _toy_set(points, values):
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    return SampledSdf(points, values, np.zeros(len(points)), values < 0)


@pytest.fixture(scope="module")
def sphere_samples(sphere_mesh, sphere_sdf):
    return build_sample_set(sphere_mesh, 4096, 0.05, seed=7, sdf=sphere_sdf)


class TestBuildSampleSet:
    def test_count_and_near_band(self, sphere_samples):
        assert len(sphere_samples) == 4096
        near = sphere_samples.values[: int(0.8 * 4096)]
        # near-surface portion stays within the offset band
        assert np.mean(np.abs(near) <= 0.05) >= 0.95

    def test_determinism(self, sphere_mesh, sphere_sdf):
        a = build_sample_set(sphere_mesh, 512, 0.05, seed=7, sdf=sphere_sdf)
        b = build_sample_set(sphere_mesh, 512, 0.05, seed=7, sdf=sphere_sdf)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_output(self, sphere_mesh, sphere_sdf):
        a = build_sample_set(sphere_mesh, 512, 0.05, seed=7, sdf=sphere_sdf)
        b = build_sample_set(sphere_mesh, 512, 0.05, seed=8, sdf=sphere_sdf)
        assert not np.array_equal(a.points, b.points)

    def test_side_matches_sign(self, sphere_samples):
        assert np.array_equal(sphere_samples.side, sphere_samples.values < 0)

    def test_too_few_points(self, sphere_mesh, sphere_sdf):
        with pytest.raises(ValueError):
            build_sample_set(sphere_mesh, 1, 0.05, seed=0, sdf=sphere_sdf)

    def test_bad_near_band(self, sphere_mesh, sphere_sdf):
        with pytest.raises(ValueError):
            build_sample_set(sphere_mesh, 16, 0.5, seed=0, sdf=sphere_sdf)


class TestDensityWeights:
    def test_three_clustered_one_isolated(self):
        s = _toy_set(
            [[0, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [0.4, 0.4, 0.4]],
            [-1, -1, -1, -1],
        )
        w = compute_density_weights(s, 0.05).weights
        assert np.array_equal(w, [2, 2, 2, 0])

    def test_opposite_sides_dont_count(self):
        s = _toy_set([[0, 0, 0], [0.01, 0, 0]], [-1, 1])
        w = compute_density_weights(s, 0.05).weights
        assert np.array_equal(w, [0, 0])

    def test_matches_brute_force(self, sphere_samples):
        weighted = compute_density_weights(sphere_samples, 0.05)
        pts = sphere_samples.points
        side = sphere_samples.side
        # O(n^2) oracle on a subsample (weights are counts over the full set,
        # so compute the full pairwise boolean matrix blockwise)
        d2 = ((pts[:512, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        same = side[:512, None] == side[None, :]
        counts = ((d2 <= 0.05**2) & same).sum(axis=1) - 1  # self excluded
        assert np.array_equal(weighted.weights[:512], counts)

    def test_bad_radius(self, sphere_samples):
        with pytest.raises(ValueError):
            compute_density_weights(sphere_samples, 0.0)


class TestDrawBatch:
    @staticmethod
    def classifier(points, indices):
        return np.ones(len(points), dtype=bool)

    def test_equal_sides(self, sphere_samples):
        s = compute_density_weights(sphere_samples, 0.05)
        batch = draw_batch(s, 2048, 0.05, self.classifier, seed=3)
        assert len(batch) == 2048
        inside = s.side[batch.indices]
        assert inside.sum() == 1024

    def test_no_duplicates(self, sphere_samples):
        s = compute_density_weights(sphere_samples, 0.05)
        batch = draw_batch(s, 512, 0.05, self.classifier, seed=3)
        assert len(np.unique(batch.indices)) == len(batch)

    def test_front_mask_requires_band(self, sphere_samples):
        s = compute_density_weights(sphere_samples, 0.05)
        batch = draw_batch(s, 512, 0.02, self.classifier, seed=3)
        # classifier says True everywhere, so the mask is exactly the band
        assert np.array_equal(batch.front_mask, np.abs(batch.values) < 0.02)

    def test_determinism(self, sphere_samples):
        s = compute_density_weights(sphere_samples, 0.05)
        a = draw_batch(s, 256, 0.05, self.classifier, seed=11)
        b = draw_batch(s, 256, 0.05, self.classifier, seed=11)
        assert np.array_equal(a.indices, b.indices)

    def test_odd_batch_rejected(self, sphere_samples):
        with pytest.raises(ValueError):
            draw_batch(sphere_samples, 3, 0.05, self.classifier, seed=0)

    def test_insufficient_positive_weights(self):
        s = _toy_set([[0, 0, 0], [0.3, 0, 0]], [-1, 1])  # all weights zero
        with pytest.raises(ValueError):
            draw_batch(s, 2, 0.05, self.classifier, seed=0)

    def test_uniform_weights_chi_squared(self):
        from scipy import stats

        n = 40
        pts = np.concatenate([
            np.linspace([-0.4, 0, 0], [0.4, 0, 0], n),
            np.linspace([-0.4, 0.2, 0], [0.4, 0.2, 0], n),
        ])
        values = np.concatenate([-np.ones(n), np.ones(n)])
        s = SampledSdf(pts, values, np.ones(2 * n), values < 0)
        hits = np.zeros(2 * n)
        draws = 1000
        for i in range(draws):
            batch = draw_batch(s, 20, 0.05, self.classifier, seed=i)
            hits[batch.indices] += 1
        # each side: uniform expectation 10 draws per point per round
        for idx in (np.arange(n), np.arange(n, 2 * n)):
            expected = hits[idx].sum() / n
            chi2 = ((hits[idx] - expected) ** 2 / expected).sum()
            p = 1 - stats.chi2.cdf(chi2, df=n - 1)
            assert p > 0.01

    def test_weight_proportionality(self):
        # two-point side with weights 3:1 -> draw frequencies near 3:1
        pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]])
        values = np.array([-1.0, -1.0, 1.0, 1.0])
        w = np.array([3.0, 1.0, 1.0, 1.0])
        s = SampledSdf(pts, values, w, values < 0)
        first = sum(
            draw_batch(s, 2, 0.05, self.classifier, seed=i).indices[0] == 0
            for i in range(2000)
        )
        assert abs(first / 2000 - 0.75) < 0.03


class TestSerialization:
    def test_roundtrip(self, tmp_path, sphere_samples):
        path = tmp_path / "s.ssdf"
        save_sampled_sdf(path, sphere_samples)
        back = load_sampled_sdf(path)
        assert len(back) == len(sphere_samples)
        assert np.allclose(back.points, sphere_samples.points, atol=1e-6)
        assert np.array_equal(back.side, sphere_samples.side)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ssdf"
        path.write_bytes(b"NOPE" + b"\0" * 8)
        with pytest.raises(ValueError, match="magic"):
            load_sampled_sdf(path)
