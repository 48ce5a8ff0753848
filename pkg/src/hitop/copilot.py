"""From model output to an ellipse recommendation, plus IOU evaluation.

Pipeline: pad the topology with a void border (boundary features segment
poorly without it), run the predictor, crop back, threshold at the 90th
percentile of the unpadded probabilities, keep the largest 8-connected
cluster, and fit its minimum-area enclosing ellipse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .geometry import EllipseRegion
from .dataset import CorpusManifest, load_pair
from .segnet import SegModel, predict
from .skeleton import BinaryTopology

PAD_WIDTH = 10
PERCENTILE = 90.0
MVEE_TOL = 1e-3

_EIGHT = np.ones((3, 3), dtype=bool)


def pad_void_border(image: np.ndarray, width: int = PAD_WIDTH) -> np.ndarray:
    """Surround the image with `width` pixels of void (zeros)."""
    if width < 0:
        raise ContractError("pad width must be >= 0")
    if width == 0:
        return np.asarray(image).copy()
    return np.pad(np.asarray(image), width)


def crop_void_border(image: np.ndarray, width: int = PAD_WIDTH) -> np.ndarray:
    if width == 0:
        return np.asarray(image).copy()
    return np.asarray(image)[width:-width, width:-width].copy()


@dataclass
class ThresholdResult:
    mask: np.ndarray
    threshold: float
    degenerate: bool


def threshold_percentile(prob_map: np.ndarray,
                         percentile: float = PERCENTILE) -> ThresholdResult:
    """Select pixels with value >= the percentile order statistic.

    The cut is the k-th largest value with k = ceil((100 - percentile)% of
    N), so maps with all-distinct values select exactly k pixels and ties
    only ever enlarge the selection.  A constant map selects everything and
    is flagged degenerate.
    """
    values = np.asarray(prob_map, dtype=np.float64)
    if values.size == 0:
        raise ContractError("cannot threshold an empty map")
    n = values.size
    k = max(1, int(math.ceil((100.0 - percentile) / 100.0 * n)))
    flat = values.ravel()
    cut = float(np.partition(flat, n - k)[n - k])
    mask = values >= cut
    degenerate = bool(mask.all())
    return ThresholdResult(mask=mask, threshold=cut, degenerate=degenerate)


def largest_connected_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected True region; ties go to the earliest raster pixel."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("mask has no set pixels")
    labels, count = ndimage.label(mask, structure=_EIGHT)
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1  # argmax: first maximum = raster-first
    return labels == best


def min_enclosing_ellipse(pixels: np.ndarray,
                          tol: float = MVEE_TOL) -> EllipseRegion:
    """Minimum-area enclosing ellipse of pixel centers (Khachiyan iteration).

    The returned ellipse is rescaled so every input point satisfies the
    quadratic form at <= 1, i.e. containment is exact, within the (1 + tol)
    optimality gap of the true minimum.  Single points and collinear sets
    are padded to a unit minor semi-axis.
    """
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractError("expected an (N, 2) array of pixel coordinates")
    if pts.shape[0] == 0:
        raise ContractError("cannot enclose an empty pixel set")
    pts = np.unique(pts, axis=0)
    n = pts.shape[0]
    if n == 1:
        return EllipseRegion(center=(pts[0, 0], pts[0, 1]),
                             semi_major=1.0, semi_minor=1.0, rotation=0.0)

    mean = pts.mean(axis=0)
    centered = pts - mean
    _, svals, vecs = np.linalg.svd(centered, full_matrices=False)
    if svals[1] <= 1e-9 * max(svals[0], 1.0):
        # collinear: span the extent along the principal direction
        v = vecs[0]
        t = centered @ v
        mid = mean + v * (t.min() + t.max()) / 2.0
        a = max((t.max() - t.min()) / 2.0, 1.0)
        return EllipseRegion(center=(mid[0], mid[1]), semi_major=a,
                             semi_minor=1.0,
                             rotation=math.atan2(v[0], v[1]) % math.pi)

    d = 2.0
    q = np.column_stack([pts, np.ones(n)])
    u = np.full(n, 1.0 / n)
    for _ in range(10000):
        V = q.T @ (q * u[:, None])
        m = np.einsum("ij,ij->i", q @ np.linalg.inv(V), q)
        j = int(np.argmax(m))
        gap = m[j] - (d + 1.0)
        if gap <= tol * (d + 1.0):
            break
        step = gap / ((d + 1.0) * (m[j] - 1.0))
        u *= (1.0 - step)
        u[j] += step

    center = u @ pts
    cov = pts.T @ (pts * u[:, None]) - np.outer(center, center)
    A = np.linalg.inv(cov) / d
    # rescale so all points satisfy the form at <= 1 exactly
    diffs = pts - center
    qf = np.einsum("ij,jk,ik->i", diffs, A, diffs)
    scale = max(float(qf.max()), 1e-302)
    A = A / scale
    w, vecs = np.linalg.eigh(A)
    if not np.all(np.isfinite(w)) or w.min() <= 0:
        raise ContractError("enclosing-ellipse computation became singular")
    axes = 1.0 / np.sqrt(w)  # ascending w -> descending axes
    major_vec = vecs[:, 0]
    semi_major, semi_minor = float(axes[0]), float(axes[1])
    if semi_minor < 1.0:
        semi_minor = 1.0
        semi_major = max(semi_major, 1.0)
    return EllipseRegion(
        center=(float(center[0]), float(center[1])),
        semi_major=semi_major, semi_minor=semi_minor,
        rotation=math.atan2(major_vec[0], major_vec[1]) % math.pi)


@dataclass
class Recommendation:
    """Suggested modification region in the unpadded image frame."""

    ellipse: EllipseRegion
    cluster_size: int
    mean_probability: float
    model_id: str = ""
    low_confidence: bool = False

    def to_json_dict(self) -> dict:
        doc = self.ellipse.to_json_dict()
        doc["confidence"] = self.mean_probability
        doc["low_confidence"] = self.low_confidence
        doc["cluster_size"] = self.cluster_size
        doc["model_id"] = self.model_id
        return doc


def _pad_to_divisor(image: np.ndarray, divisor: int):
    """Extra void on the borders so dims divide the pooling factor."""
    h, w = image.shape
    eh = (-h) % divisor
    ew = (-w) % divisor
    top, left = eh // 2, ew // 2
    padded = np.pad(image, ((top, eh - top), (left, ew - left)))
    return padded, (top, left)


def recommend(model: SegModel, topology: BinaryTopology | np.ndarray,
              model_id: str = "", pad: int = PAD_WIDTH,
              percentile: float = PERCENTILE) -> Recommendation:
    """pad -> predict -> crop -> threshold -> largest cluster -> ellipse."""
    if isinstance(topology, BinaryTopology):
        density = topology.density if topology.density is not None \
            else topology.solid.astype(np.float64)
    else:
        density = np.asarray(topology, dtype=np.float64)
    padded = pad_void_border(density, pad)
    aligned, (top, left) = _pad_to_divisor(padded, model.config.divisor)
    probs_full = predict(model, aligned)
    h, w = padded.shape
    probs = probs_full[top:top + h, left:left + w]
    probs = crop_void_border(probs, pad)

    thr = threshold_percentile(probs, percentile)
    cluster = largest_connected_component(thr.mask)
    ellipse = min_enclosing_ellipse(np.argwhere(cluster))
    solid = density >= 0.5
    low = thr.degenerate or not bool((cluster & solid).any())
    return Recommendation(
        ellipse=ellipse,
        cluster_size=int(cluster.sum()),
        mean_probability=float(probs[cluster].mean()),
        model_id=model_id,
        low_confidence=low,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 1.0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ContractError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass
class EvalReport:
    mean_iou: float
    bucket_above_080: float
    bucket_030_to_050: float
    bucket_below_020: float
    scores: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "buckets": {
                "iou_gt_0.80": self.bucket_above_080,
                "iou_0.30_0.50": self.bucket_030_to_050,
                "iou_le_0.20": self.bucket_below_020,
            },
            "n": len(self.scores),
            "scores": self.scores,
        }


def _report_from_scores(scores: list[float]) -> EvalReport:
    arr = np.asarray(scores)
    return EvalReport(
        mean_iou=float(arr.mean()),
        bucket_above_080=float((arr > 0.80).mean()),
        bucket_030_to_050=float(((arr >= 0.30) & (arr <= 0.50)).mean()),
        bucket_below_020=float((arr <= 0.20).mean()),
        scores=[float(s) for s in scores],
    )


def evaluate(model: SegModel, manifest: CorpusManifest, split: str = "test",
             percentile: float = PERCENTILE,
             predictor=None) -> EvalReport:
    """Per-sample IOU of thresholded predictions against ground truth.

    Thresholding (not the fitted ellipse) is compared, on unpadded images.
    `predictor` may replace the model's probability map for baselines and
    testing: it maps (density, mask) -> probability map.
    """
    records = manifest.by_split(split)
    if not records:
        raise ContractError(f"manifest has no '{split}' samples")
    scores = []
    for rec in records:
        density, gt = load_pair(manifest, rec)
        if predictor is not None:
            probs = np.asarray(predictor(density, gt), dtype=np.float64)
        else:
            probs = predict(model, density)
        mask = threshold_percentile(probs, percentile).mask
        scores.append(iou(mask, gt))
    return _report_from_scores(scores)


def random_mask_baseline(manifest: CorpusManifest, split: str = "test",
                         density: float = 0.10, seed: int = 0) -> EvalReport:
    """IOU of uniformly random masks with the given fill density."""
    records = manifest.by_split(split)
    if not records:
        raise ContractError(f"manifest has no '{split}' samples")
    rng = np.random.default_rng(seed)
    scores = []
    for rec in records:
        _, gt = load_pair(manifest, rec)
        mask = rng.random(gt.shape) < density
        scores.append(iou(mask, gt))
    return _report_from_scores(scores)
