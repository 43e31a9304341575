"""Distribution metrics over pluggable feature embedders.

FID fits a Gaussian to each feature set and reports the squared
Wasserstein-2 distance between them. Precision/recall build k-NN manifolds
(a ball around every point with radius equal to the distance to its k-th
neighbour within the same set) and report the fraction of points from one
set covered by the other's manifold.

Embedders replace the usual pretrained classifier at desk scale: an 8x8
pixel thumbnail, or a frozen random conv net. Feature sets can also be
saved to and loaded from .npz files so externally computed embeddings
plug into the same comparisons.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .substrate import ops

DEFAULT_KNN_K = 3
_CHUNK = 512


@dataclass
class FeatureSet:
    """[N, d] embedding matrix tagged with the embedder that produced it."""

    features: np.ndarray
    embedder_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be [N, d], got shape {self.features.shape}")
        if self.features.shape[0] < 2:
            raise ValueError("a feature set needs at least 2 samples")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain NaN or Inf")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def save(self, path) -> None:
        np.savez(path, features=self.features, embedder_id=np.array(self.embedder_id))

    @classmethod
    def load(cls, path) -> "FeatureSet":
        with np.load(path, allow_pickle=False) as data:
            return cls(features=data["features"], embedder_id=str(data["embedder_id"]))


@dataclass
class MetricReport:
    """One evaluation record, serialized as a JSON line by the eval CLI."""

    step: int
    fid: float
    precision: float
    recall: float
    k: int
    embedder_id: str
    n_real: int
    n_fake: int

    def to_json_line(self) -> str:
        return json.dumps({
            "step": self.step, "fid": self.fid, "precision": self.precision,
            "recall": self.recall, "k": self.k, "embedder_id": self.embedder_id,
            "n_real": self.n_real, "n_fake": self.n_fake,
        }, sort_keys=True)


def _check_pair(real: FeatureSet, fake: FeatureSet) -> None:
    if real.dim != fake.dim:
        raise ValueError(f"feature dims differ: {real.dim} vs {fake.dim}")


def _sqrt_trace_of_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((cov_b^{1/2} cov_a cov_b^{1/2})^{1/2}) with eigenvalue clamping."""
    eigvals_b, eigvecs_b = np.linalg.eigh(cov_b)
    sqrt_b = (eigvecs_b * np.sqrt(np.clip(eigvals_b, 0.0, None))) @ eigvecs_b.T
    inner = sqrt_b @ cov_a @ sqrt_b
    eigvals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())


def fid(real: FeatureSet, fake: FeatureSet) -> float:
    """Frechet distance between Gaussians fitted to the two feature sets."""
    _check_pair(real, fake)
    for side, fs in (("real", real), ("fake", fake)):
        if fs.n < fs.dim:
            warnings.warn(
                f"{side} feature set has N={fs.n} < d={fs.dim}; covariance is rank-deficient",
                stacklevel=2)
    mu_r = real.features.mean(axis=0)
    mu_f = fake.features.mean(axis=0)
    cov_r = np.cov(real.features, rowvar=False).reshape(real.dim, real.dim)
    cov_f = np.cov(fake.features, rowvar=False).reshape(fake.dim, fake.dim)
    mean_term = float(((mu_r - mu_f) ** 2).sum())
    trace_term = float(np.trace(cov_r) + np.trace(cov_f)) - 2.0 * _sqrt_trace_of_product(cov_r, cov_f)
    return max(0.0, mean_term + trace_term)


def _knn_radii(points: np.ndarray, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point in the set."""
    n = points.shape[0]
    sq_norms = (points ** 2).sum(axis=1)
    radii = np.empty(n)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        block = points[start:stop]
        d2 = sq_norms[start:stop, None] + sq_norms[None, :] - 2.0 * block @ points.T
        np.clip(d2, 0.0, None, out=d2)
        for i in range(stop - start):
            d2[i, start + i] = np.inf
        radii[start:stop] = np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])
    return radii


def _covered_fraction(queries: np.ndarray, manifold: np.ndarray, radii: np.ndarray) -> float:
    """Fraction of queries within distance radii[j] of some manifold point j.

    Boundary points (distance exactly equal to the radius) count as inside.
    """
    sq_m = (manifold ** 2).sum(axis=1)
    covered = 0
    for start in range(0, queries.shape[0], _CHUNK):
        block = queries[start:start + _CHUNK]
        d2 = (block ** 2).sum(axis=1)[:, None] + sq_m[None, :] - 2.0 * block @ manifold.T
        np.clip(d2, 0.0, None, out=d2)
        covered += int((np.sqrt(d2) <= radii[None, :]).any(axis=1).sum())
    return covered / queries.shape[0]


def precision_recall(real: FeatureSet, fake: FeatureSet, k: int = DEFAULT_KNN_K):
    """(precision, recall) from k-NN manifold membership."""
    _check_pair(real, fake)
    if not 1 <= k < min(real.n, fake.n):
        raise ValueError(f"k={k} out of range for set sizes {real.n}, {fake.n}")
    real_radii = _knn_radii(real.features, k)
    fake_radii = _knn_radii(fake.features, k)
    precision = _covered_fraction(fake.features, real.features, real_radii)
    recall = _covered_fraction(real.features, fake.features, fake_radii)
    return precision, recall


def _check_images(images: torch.Tensor, size: int) -> torch.Tensor:
    ops.check_feature_map(images, "images")
    if images.shape[2] != size or images.shape[3] != size:
        raise ValueError(f"embedder expects {size}x{size} images, got {tuple(images.shape)}")
    ops.require_finite(images, "images")
    return images


class PixelEmbedder:
    """Average-pool to 8x8 and flatten; d = 3 * 8 * 8 = 192."""

    def __init__(self, image_size: int = 32):
        if image_size % 8:
            raise ValueError("image size must be divisible by 8")
        self.image_size = image_size
        self.embedder_id = "pixel"

    def embed(self, images: torch.Tensor) -> FeatureSet:
        images = _check_images(images, self.image_size)
        with torch.no_grad():
            pooled = torch.nn.functional.avg_pool2d(images, self.image_size // 8)
            feats = pooled.reshape(images.shape[0], -1).double().cpu().numpy()
        return FeatureSet(feats, self.embedder_id)


class RandConvEmbedder:
    """Frozen random 3-layer conv net with global average pooling; d = 128."""

    def __init__(self, seed: int = 0, image_size: int = 32):
        self.image_size = image_size
        self.seed = seed
        self.embedder_id = f"randconv-{seed}"
        gen = torch.Generator().manual_seed(seed)
        widths = (3, 32, 64, 128)
        self.convs = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            w = torch.empty(cout, cin, 3, 3)
            ops.init_conv_weight_(w, gen)
            self.convs.append(w)

    def embed(self, images: torch.Tensor) -> FeatureSet:
        images = _check_images(images, self.image_size)
        with torch.no_grad():
            h = images.float()
            for w in self.convs:
                h = torch.relu(torch.nn.functional.conv2d(h, w, stride=2, padding=1))
            feats = h.mean(dim=(2, 3)).double().cpu().numpy()
        return FeatureSet(feats, self.embedder_id)


def make_embedder(spec: str, image_size: int = 32):
    """Build an embedder from its id string: 'pixel' or 'randconv[:seed]'."""
    if spec == "pixel":
        return PixelEmbedder(image_size)
    if spec == "randconv":
        return RandConvEmbedder(0, image_size)
    if spec.startswith("randconv:"):
        return RandConvEmbedder(int(spec.split(":", 1)[1]), image_size)
    raise ValueError(f"unknown embedder {spec!r}; expected pixel or randconv[:seed]")


def embed(embedder, images: torch.Tensor) -> FeatureSet:
    return embedder.embed(images)


def compare_feature_sets(real: FeatureSet, fake: FeatureSet, k: int = DEFAULT_KNN_K,
                         step: int = 0) -> MetricReport:
    """FID plus precision/recall in one report."""
    precision, recall = precision_recall(real, fake, k)
    return MetricReport(step=step, fid=fid(real, fake), precision=precision,
                        recall=recall, k=k, embedder_id=real.embedder_id,
                        n_real=real.n, n_fake=fake.n)
