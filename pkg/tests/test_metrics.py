import numpy as np
import pytest
import torch

from fcgan.metrics import (
    FeatureSet,
    MetricReport,
    PixelEmbedder,
    RandConvEmbedder,
    compare_feature_sets,
    fid,
    make_embedder,
    precision_recall,
)


def _exact_moments(n, mean, std, seed, dim=1):
    """Samples whose sample mean/std (ddof=1) are exactly the targets."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, dim))
    z = (z - z.mean(axis=0)) / z.std(axis=0, ddof=1)
    return z * std + mean


def _fs(arr, tag="test"):
    return FeatureSet(np.asarray(arr, dtype=np.float64), tag)


def test_fid_zero_on_identical_sets():
    feats = _fs(np.random.default_rng(0).standard_normal((64, 5)))
    assert fid(feats, feats) <= 1e-8


def test_fid_closed_form_mean_shift():
    real = _fs(_exact_moments(50, 0.0, 1.0, seed=1))
    fake = _fs(_exact_moments(50, 1.0, 1.0, seed=2))
    assert fid(real, fake) == pytest.approx(1.0, abs=1e-6)


def test_fid_closed_form_scale_change():
    real = _fs(_exact_moments(50, 0.0, 1.0, seed=3))
    fake = _fs(_exact_moments(50, 0.0, 2.0, seed=4))
    assert fid(real, fake) == pytest.approx(1.0, abs=1e-6)


def test_fid_symmetric_and_orthogonal_invariant():
    rng = np.random.default_rng(5)
    real = rng.standard_normal((120, 16))
    fake = rng.standard_normal((120, 16)) * 1.3 + 0.2
    base = fid(_fs(real), _fs(fake))
    assert fid(_fs(fake), _fs(real)) == pytest.approx(base, abs=1e-9)
    q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
    rotated = fid(_fs(real @ q), _fs(fake @ q))
    assert rotated == pytest.approx(base, abs=1e-6)


def test_fid_is_nonnegative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.standard_normal((30, 4))
        b = rng.standard_normal((30, 4))
        assert fid(_fs(a), _fs(b)) >= 0.0


def test_fid_input_validation():
    a = _fs(np.zeros((10, 3)) + np.arange(30).reshape(10, 3))
    b = _fs(np.random.default_rng(0).standard_normal((10, 4)))
    with pytest.raises(ValueError, match="dims differ"):
        fid(a, b)
    with pytest.raises(ValueError, match="at least 2"):
        _fs(np.zeros((1, 3)))
    with pytest.raises(ValueError, match="NaN"):
        _fs(np.full((4, 2), np.nan))


def test_fid_warns_when_samples_fewer_than_dims():
    rng = np.random.default_rng(7)
    small = _fs(rng.standard_normal((5, 8)))
    other = _fs(rng.standard_normal((20, 8)))
    with pytest.warns(UserWarning, match="rank-deficient"):
        fid(small, other)


def _brute_force_pr(real, fake, k):
    """Independent O(N^2 d) double-loop manifold membership oracle."""

    def radii(points):
        out = []
        for i, p in enumerate(points):
            dists = sorted(np.linalg.norm(p - q) for j, q in enumerate(points) if j != i)
            out.append(dists[k - 1])
        return out

    def covered(queries, manifold, rad):
        hits = 0
        for q in queries:
            if any(np.linalg.norm(q - m) <= r for m, r in zip(manifold, rad)):
                hits += 1
        return hits / len(queries)

    return covered(fake, real, radii(real)), covered(real, fake, radii(fake))


def test_precision_recall_identical_sets():
    pts = np.random.default_rng(8).standard_normal((40, 3))
    p, r = precision_recall(_fs(pts), _fs(pts.copy()), k=3)
    assert (p, r) == (1.0, 1.0)


def test_precision_recall_separated_clusters():
    rng = np.random.default_rng(9)
    near = rng.standard_normal((30, 2))
    far = rng.standard_normal((30, 2)) + 1e6
    assert precision_recall(_fs(near), _fs(far), k=3) == (0.0, 0.0)


def test_precision_recall_matches_brute_force_oracle():
    rng = np.random.default_rng(10)
    for trial in range(100):
        n_r = int(rng.integers(10, 201))
        n_f = int(rng.integers(10, 201))
        d = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5]))
        if k >= min(n_r, n_f):
            k = 1
        real = rng.standard_normal((n_r, d))
        fake = rng.standard_normal((n_f, d)) + rng.uniform(-1, 1)
        got = precision_recall(_fs(real), _fs(fake), k=k)
        expected = _brute_force_pr(real, fake, k)
        assert got == expected, f"trial {trial}: {got} != {expected}"


def test_increasing_k_never_shrinks_the_metrics():
    rng = np.random.default_rng(11)
    real = _fs(rng.standard_normal((60, 4)))
    fake = _fs(rng.standard_normal((60, 4)) + 0.5)
    prev = (0.0, 0.0)
    for k in (1, 3, 5, 9):
        cur = precision_recall(real, fake, k=k)
        assert cur[0] >= prev[0] and cur[1] >= prev[1]
        prev = cur


def test_precision_recall_k_validation():
    pts = _fs(np.random.default_rng(12).standard_normal((10, 2)))
    with pytest.raises(ValueError, match="out of range"):
        precision_recall(pts, pts, k=10)
    with pytest.raises(ValueError, match="out of range"):
        precision_recall(pts, pts, k=0)


def test_pixel_embedder_constant_image():
    emb = PixelEmbedder()
    images = torch.full((3, 3, 32, 32), 0.25)
    feats = emb.embed(images)
    assert feats.features.shape == (3, 192)
    assert np.allclose(feats.features, 0.25)
    assert feats.embedder_id == "pixel"


def test_embedders_are_deterministic():
    images = torch.randn(4, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    for emb in (PixelEmbedder(), RandConvEmbedder(7)):
        a = emb.embed(images).features
        b = emb.embed(images).features
        assert np.array_equal(a, b)


def test_randconv_seeds_give_distinct_features():
    images = torch.randn(4, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    a = RandConvEmbedder(0).embed(images)
    b = RandConvEmbedder(1).embed(images)
    assert a.features.shape == (4, 128)
    assert not np.allclose(a.features, b.features)
    assert a.embedder_id != b.embedder_id


def test_embedder_resolution_check():
    with pytest.raises(ValueError, match="32x32"):
        PixelEmbedder().embed(torch.randn(2, 3, 16, 16))


def test_make_embedder_parsing():
    assert make_embedder("pixel").embedder_id == "pixel"
    assert make_embedder("randconv").embedder_id == "randconv-0"
    assert make_embedder("randconv:9").embedder_id == "randconv-9"
    with pytest.raises(ValueError, match="unknown embedder"):
        make_embedder("inception")


def test_feature_set_file_roundtrip(tmp_path):
    feats = _fs(np.random.default_rng(13).standard_normal((12, 6)), tag="external-test")
    path = tmp_path / "feats.npz"
    feats.save(path)
    loaded = FeatureSet.load(path)
    assert np.array_equal(loaded.features, feats.features)
    assert loaded.embedder_id == "external-test"


def test_metric_report_json_line():
    report = MetricReport(step=3, fid=1.5, precision=0.5, recall=0.25, k=3,
                          embedder_id="pixel", n_real=10, n_fake=10)
    line = report.to_json_line()
    assert '"fid": 1.5' in line and '"step": 3' in line
    import json

    decoded = json.loads(line)
    assert set(decoded) == {"step", "fid", "precision", "recall", "k",
                            "embedder_id", "n_real", "n_fake"}


def test_compare_feature_sets_on_identical_data():
    pts = _fs(np.random.default_rng(14).standard_normal((50, 4)))
    report = compare_feature_sets(pts, _fs(pts.features.copy()), k=3)
    assert report.fid <= 1e-8
    assert report.precision == report.recall == 1.0
