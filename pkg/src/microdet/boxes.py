"""Axis-aligned box geometry: IoU, DIoU, analytic loss gradients, greedy NMS.

Boxes are corner-form (x1, y1, x2, y2) with x2 >= x1 and y2 >= y1;
zero-area boxes are legal, negative extents are rejected. The distance
penalty in DIoU divides by the squared enclosing diagonal with a 1e-12
floor, a numerical guard (not semantics) for near-point boxes.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateBoxError, ValidationError

C2_FLOOR = 1e-12


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float


def as_box_array(box) -> np.ndarray:
    arr = np.asarray(box, dtype=np.float64).reshape(-1)
    if arr.shape != (4,):
        raise ValidationError(f"a box needs 4 coordinates, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"box has non-finite coordinates: {arr}")
    if arr[2] < arr[0] or arr[3] < arr[1]:
        raise ValidationError(f"box has negative extent: {tuple(arr)}")
    return arr


def _check_pairs(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 4:
        raise ValidationError(f"expected matching (P,4) arrays, got {a.shape} and {b.shape}")


def iou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of aligned (P,4) corner boxes; 0 when both degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pairs(a, b)
    iw = np.maximum(0.0, np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]))
    ih = np.maximum(0.0, np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]))
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def diou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU minus the normalized squared center distance, per aligned pair."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pairs(a, b)
    rho2 = (
        ((a[:, 0] + a[:, 2]) - (b[:, 0] + b[:, 2])) ** 2
        + ((a[:, 1] + a[:, 3]) - (b[:, 1] + b[:, 3])) ** 2
    ) / 4.0
    cw = np.maximum(a[:, 2], b[:, 2]) - np.minimum(a[:, 0], b[:, 0])
    ch = np.maximum(a[:, 3], b[:, 3]) - np.minimum(a[:, 1], b[:, 1])
    c2 = cw * cw + ch * ch
    return iou_pairs(a, b) - rho2 / np.maximum(c2, C2_FLOOR)


def _pair_grads(pred: np.ndarray, target: np.ndarray, kind: str) -> np.ndarray:
    """d(1 - metric)/d(pred corners) for aligned (P,4) boxes, vectorized.

    Ties in the min/max edge selections take the pred-side subgradient;
    an exactly coincident pair gets the zero gradient of the optimum.
    """
    p, t = pred, target
    px1, py1, px2, py2 = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
    tx1, ty1, tx2, ty2 = t[:, 0], t[:, 1], t[:, 2], t[:, 3]

    ix1_p = (px1 >= tx1).astype(float)
    iy1_p = (py1 >= ty1).astype(float)
    ix2_p = (px2 <= tx2).astype(float)
    iy2_p = (py2 <= ty2).astype(float)
    iw = np.minimum(px2, tx2) - np.maximum(px1, tx1)
    ih = np.minimum(py2, ty2) - np.maximum(py1, ty1)
    overlap = (iw > 0) & (ih > 0)
    iw_c = np.where(overlap, iw, 0.0)
    ih_c = np.where(overlap, ih, 0.0)
    inter = iw_c * ih_c

    # dI/d(pred corner); zero wherever the boxes do not overlap
    d_inter = np.stack(
        [-ih_c * ix1_p, -iw_c * iy1_p, ih_c * ix2_p, iw_c * iy2_p], axis=1
    ) * overlap[:, None]

    wp = px2 - px1
    hp = py2 - py1
    d_area = np.stack([-hp, -wp, hp, wp], axis=1)

    area_p = wp * hp
    area_t = (tx2 - tx1) * (ty2 - ty1)
    union = area_p + area_t - inter
    union_safe = np.where(union > 0, union, 1.0)
    d_union = d_area - d_inter
    d_iou = (d_inter * union_safe[:, None] - inter[:, None] * d_union) / (union_safe**2)[:, None]
    d_iou = np.where((union > 0)[:, None], d_iou, 0.0)

    grad = -d_iou
    if kind == "diou":
        dcx = (px1 + px2 - tx1 - tx2) / 2.0
        dcy = (py1 + py2 - ty1 - ty2) / 2.0
        rho2 = dcx * dcx + dcy * dcy
        d_rho2 = np.stack([dcx, dcy, dcx, dcy], axis=1)

        cw = np.maximum(px2, tx2) - np.minimum(px1, tx1)
        ch = np.maximum(py2, ty2) - np.minimum(py1, ty1)
        c2 = np.maximum(cw * cw + ch * ch, C2_FLOOR)
        d_c2 = np.stack(
            [
                -2.0 * cw * (px1 <= tx1),
                -2.0 * ch * (py1 <= ty1),
                2.0 * cw * (px2 >= tx2),
                2.0 * ch * (py2 >= ty2),
            ],
            axis=1,
        )
        d_penalty = (d_rho2 * c2[:, None] - rho2[:, None] * d_c2) / (c2**2)[:, None]
        grad = grad + d_penalty

    coincident = np.all(p == t, axis=1)
    grad[coincident] = 0.0
    return grad


def iou_loss_grad_pairs(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return _pair_grads(np.asarray(pred, float), np.asarray(target, float), "iou")


def diou_loss_grad_pairs(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return _pair_grads(np.asarray(pred, float), np.asarray(target, float), "diou")


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------


def iou(a, b) -> float:
    return float(iou_pairs(as_box_array(a)[None], as_box_array(b)[None])[0])


def diou(a, b) -> float:
    return float(diou_pairs(as_box_array(a)[None], as_box_array(b)[None])[0])


def diou_loss(a, b) -> float:
    """The training objective 1 - diou(a, b); 0 for identical boxes."""
    return 1.0 - diou(a, b)


def diou_grad(pred, target) -> np.ndarray:
    """Gradient of diou_loss over the pred corners (x1, y1, x2, y2)."""
    p = as_box_array(pred)
    t = as_box_array(target)
    cw = max(p[2], t[2]) - min(p[0], t[0])
    ch = max(p[3], t[3]) - min(p[1], t[1])
    if cw * cw + ch * ch < C2_FLOOR and not np.array_equal(p, t):
        raise DegenerateBoxError("enclosing box collapsed to a point; gradient undefined")
    return diou_loss_grad_pairs(p[None], t[None])[0]


# ---------------------------------------------------------------------------
# non-maximum suppression
# ---------------------------------------------------------------------------


def nms(
    detections: Sequence[tuple],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
) -> list:
    """Greedy descending-score suppression over (box, score, class) tuples.

    A detection is dropped when its IoU with an already-kept detection of
    the same class (any class if ``class_aware=False``) exceeds the
    threshold. Score ties keep the lower original index. Returns the kept
    input tuples in descending-score order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValidationError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    if not detections:
        return []
    boxes = np.stack([as_box_array(d[0]) for d in detections])
    scores = np.array([float(d[1]) for d in detections])
    if not np.all(np.isfinite(scores)):
        raise ValidationError("detection scores must be finite")
    classes = np.array([int(d[2]) for d in detections])

    order = np.argsort(-scores, kind="stable")
    alive = np.ones(len(detections), dtype=bool)
    kept: list[int] = []
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(int(idx))
        candidates = alive.copy()
        candidates[idx] = False
        if class_aware:
            candidates &= classes == classes[idx]
        cand_idx = np.nonzero(candidates)[0]
        if cand_idx.size:
            overlaps = iou_pairs(np.repeat(boxes[idx][None], cand_idx.size, axis=0), boxes[cand_idx])
            alive[cand_idx[overlaps > iou_threshold]] = False
    return [detections[i] for i in kept]


def gradient_descent_alignment(
    pred: np.ndarray,
    target: np.ndarray,
    kind: str = "diou",
    steps: int = 10_000,
    lr0: float = 8.0,
) -> np.ndarray:
    """Plain gradient descent of the box-regression loss, vectorized over pairs.

    The step size decays linearly to zero, which damps the oscillation at
    the overlap kink once boxes align. Returns the final pred boxes; with
    ``kind="iou"`` and disjoint starts the gradient is identically zero, so
    the input is returned unchanged — the plateau this loss family fixes.
    """
    grad_fn = {"iou": iou_loss_grad_pairs, "diou": diou_loss_grad_pairs}[kind]
    cur = np.array(pred, dtype=np.float64, copy=True)
    tgt = np.asarray(target, dtype=np.float64)
    for t in range(steps):
        lr = lr0 * (1.0 - t / steps)
        cur -= lr * grad_fn(cur, tgt)
    return cur


def center_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance between the centers of aligned (P,4) boxes."""
    ca = corner_to_center(np.asarray(a, float))[:, :2]
    cb = corner_to_center(np.asarray(b, float))[:, :2]
    return np.linalg.norm(ca - cb, axis=1)


# ---------------------------------------------------------------------------
# coordinate conversions (exact)
# ---------------------------------------------------------------------------


def corner_to_center(boxes: np.ndarray) -> np.ndarray:
    """(x1,y1,x2,y2) -> (cx,cy,w,h) on a (...,4) array."""
    boxes = np.asarray(boxes, dtype=np.float64)
    cx = (boxes[..., 0] + boxes[..., 2]) / 2.0
    cy = (boxes[..., 1] + boxes[..., 3]) / 2.0
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return np.stack([cx, cy, w, h], axis=-1)


def center_to_corner(boxes: np.ndarray) -> np.ndarray:
    """(cx,cy,w,h) -> (x1,y1,x2,y2) on a (...,4) array."""
    boxes = np.asarray(boxes, dtype=np.float64)
    half_w = boxes[..., 2] / 2.0
    half_h = boxes[..., 3] / 2.0
    return np.stack(
        [
            boxes[..., 0] - half_w,
            boxes[..., 1] - half_h,
            boxes[..., 0] + half_w,
            boxes[..., 1] + half_h,
        ],
        axis=-1,
    )
