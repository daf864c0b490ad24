"""K-means clustering of box dimensions into anchor priors.

Lloyd iterations from a k-means++ start minimize the sum of squared
intra-cluster errors over (w, h) points; the objective is asserted
non-increasing every iteration. A 1-IoU distance is available as an
off-by-default extension (no monotonicity guarantee under the mean
centroid update, so the assert is euclidean-only).
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .rng import substream

log = logging.getLogger(__name__)

DEFAULT_K = 9


@dataclass(frozen=True)
class AnchorSet:
    """K (w, h) priors sorted by area ascending, plus the final objective."""

    anchors: tuple[tuple[float, float], ...]
    k: int
    inertia: float
    distance: str = "euclidean"

    def __post_init__(self):
        for w, h in self.anchors:
            if w <= 0 or h <= 0:
                raise ValidationError(f"anchor dimensions must be positive, got ({w}, {h})")
        areas = [w * h for w, h in self.anchors]
        if areas != sorted(areas):
            raise ValidationError("anchors must be sorted by area ascending")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "distance": self.distance,
            "inertia": self.inertia,
            "anchors": [list(a) for a in self.anchors],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AnchorSet":
        return cls(
            anchors=tuple((float(w), float(h)) for w, h in payload["anchors"]),
            k=int(payload["k"]),
            inertia=float(payload["inertia"]),
            distance=payload.get("distance", "euclidean"),
        )


def _shape_iou(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU of co-centered (w,h) rectangles: points (n,2) x centroids (k,2) -> (n,k)."""
    inter = np.minimum(points[:, None, 0], centroids[None, :, 0]) * np.minimum(
        points[:, None, 1], centroids[None, :, 1]
    )
    union = (
        points[:, 0] * points[:, 1]
    )[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def _distances(points: np.ndarray, centroids: np.ndarray, distance: str) -> np.ndarray:
    if distance == "euclidean":
        diff = points[:, None, :] - centroids[None, :, :]
        return np.sum(diff * diff, axis=2)
    if distance == "iou":
        return 1.0 - _shape_iou(points, centroids)
    raise ValidationError(f"unknown k-means distance {distance!r}")


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator, distance: str) -> np.ndarray:
    centroids = [points[rng.integers(len(points))]]
    for _ in range(1, k):
        d = _distances(points, np.array(centroids), distance).min(axis=1)
        total = d.sum()
        if total <= 0:
            # remaining mass is on already-chosen points; take any unused one
            probs = np.full(len(points), 1.0 / len(points))
        else:
            probs = d / total
        centroids.append(points[rng.choice(len(points), p=probs)])
    return np.array(centroids)


def kmeans_anchors(
    dims,
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-6,
    distance: str = "euclidean",
) -> AnchorSet:
    """Cluster (w, h) box dimensions into k anchors via Lloyd iterations.

    Deterministic given the seed. Stops when the relative objective
    improvement drops below ``tol`` or after ``max_iters``. Empty clusters
    are reseeded at the point currently farthest from its own centroid.
    """
    points = np.asarray(list(dims), dtype=np.float64)
    if points.size == 0:
        raise ValidationError("no box dimensions to cluster")
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValidationError(f"dims must be (w, h) pairs, got array shape {points.shape}")
    if np.any(points <= 0):
        raise ValidationError("box dimensions must be positive")
    if len(points) < k:
        raise ValidationError(f"need at least k={k} points, got {len(points)}")
    distinct = len(np.unique(points, axis=0))
    if distinct < k:
        raise ValidationError(
            f"k={k} exceeds the {distinct} distinct dimension points; reduce k"
        )

    rng = substream(seed, "kmeans")
    centroids = _kmeans_pp_init(points, k, rng, distance)

    prev_j = np.inf
    for _ in range(max_iters):
        d = _distances(points, centroids, distance)
        assign = d.argmin(axis=1)

        # reseed empty clusters at the worst-fit point
        for ci in range(k):
            if np.any(assign == ci):
                continue
            worst = int(np.argmax(d[np.arange(len(points)), assign]))
            centroids[ci] = points[worst]
            d[:, ci] = _distances(points, centroids[ci : ci + 1], distance)[:, 0]
            assign = d.argmin(axis=1)

        j = float(d[np.arange(len(points)), assign].sum())
        if distance == "euclidean":
            assert j <= prev_j + 1e-9 * max(1.0, abs(prev_j)), "Lloyd objective increased"
        if prev_j - j < tol * max(prev_j, 1e-12):
            prev_j = j
            break
        prev_j = j
        for ci in range(k):
            centroids[ci] = points[assign == ci].mean(axis=0)

    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    anchors = tuple((float(w), float(h)) for w, h in centroids[order])
    return AnchorSet(anchors=anchors, k=k, inertia=prev_j, distance=distance)


# ---------------------------------------------------------------------------
# annotation ingestion
# ---------------------------------------------------------------------------


def _dims_from_voc(path: Path, target_size) -> list[tuple[float, float]]:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(f"{path}: malformed XML ({exc})") from exc

    def field(node, tag, context):
        child = node.find(tag)
        if child is None or child.text is None:
            raise ParseError(f"{path}: missing <{tag}> in {context}")
        try:
            return float(child.text)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric <{tag}> in {context}") from exc

    scale_w = scale_h = 1.0
    if target_size is not None:
        size = root.find("size")
        if size is None:
            raise ParseError(f"{path}: missing <size> needed for rescaling")
        img_w = field(size, "width", "<size>")
        img_h = field(size, "height", "<size>")
        scale_w = target_size[0] / img_w
        scale_h = target_size[1] / img_h

    dims = []
    for i, obj in enumerate(root.iter("object")):
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError(f"{path}: missing <bndbox> in object {i}")
        w = field(bnd, "xmax", f"object {i}") - field(bnd, "xmin", f"object {i}")
        h = field(bnd, "ymax", f"object {i}") - field(bnd, "ymin", f"object {i}")
        dims.append((w * scale_w, h * scale_h))
    return dims


def _dims_from_json(path: Path, target_size) -> list[tuple[float, float]]:
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from exc
    for key in ("width", "height", "objects"):
        if key not in payload:
            raise ParseError(f"{path}: missing field {key!r}")
    scale_w = scale_h = 1.0
    if target_size is not None:
        scale_w = target_size[0] / float(payload["width"])
        scale_h = target_size[1] / float(payload["height"])
    dims = []
    for i, obj in enumerate(payload["objects"]):
        for key in ("x1", "y1", "x2", "y2"):
            if key not in obj:
                raise ParseError(f"{path}: missing field {key!r} in object {i}")
        dims.append(
            ((obj["x2"] - obj["x1"]) * scale_w, (obj["y2"] - obj["y1"]) * scale_h)
        )
    return dims


def load_box_dims(
    annotations: str | Path,
    format: str = "voc-xml",
    target_size: tuple[int, int] | None = None,
) -> list[tuple[float, float]]:
    """Extract (w, h) per object from a directory or file of annotations.

    ``target_size=(W, H)`` rescales dimensions from each image's native
    resolution to the training resolution. Zero/negative extents are
    skipped (count logged as a warning); files are visited in sorted order.
    """
    if format not in ("voc-xml", "json"):
        raise ValidationError(f"unknown annotation format {format!r}")
    root = Path(annotations)
    if root.is_dir():
        pattern = "*.xml" if format == "voc-xml" else "*.json"
        files = sorted(root.glob(pattern))
        if not files:
            raise ValidationError(f"no {pattern} files under {root}")
    elif root.exists():
        files = [root]
    else:
        raise ValidationError(f"annotation path does not exist: {root}")

    parser = _dims_from_voc if format == "voc-xml" else _dims_from_json
    dims: list[tuple[float, float]] = []
    skipped = 0
    for path in files:
        for w, h in parser(path, target_size):
            if w <= 0 or h <= 0:
                skipped += 1
                continue
            dims.append((float(w), float(h)))
    if skipped:
        log.warning("skipped %d boxes with zero or negative extent", skipped)
    return dims
