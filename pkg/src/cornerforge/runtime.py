"""Applying decision trees to images: detection, corner scores, suppression.

The corner score of a pixel is the largest threshold at which it still
classifies as a corner; scores drive 3x3 non-maximal suppression and
feature-count control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import GrayImage
from .segment import pixel_state
from .trees import CompiledTree, Leaf, Node, OffsetTable, RING16, TernaryTree


class NotACornerError(ValueError):
    """Scored pixel does not classify as a corner at the minimum threshold."""


@dataclass(frozen=True)
class Keypoint:
    """Detected corner: integer position plus score.

    Segment-test detectors produce integer scores in [1, 255] (threshold
    units); response-based detectors produce float scores.
    """

    x: int
    y: int
    score: float


def _raster_key(kp: Keypoint):
    return (kp.y, kp.x)


def compile_tree(tree: TernaryTree, table: OffsetTable = RING16) -> CompiledTree:
    return CompiledTree(tree, table)


def classify_pixel(tree: TernaryTree, img: GrayImage, p: tuple[int, int],
                   t: int, table: OffsetTable = RING16) -> bool:
    """Walk the tree at one pixel: each node reads its offset pixel and
    branches on the darker/similar/brighter state."""
    x, y = p
    margin = table.margin
    if not (margin <= x < img.width - margin and margin <= y < img.height - margin):
        raise ValueError(f"({x},{y}) is within {margin} pixels of an edge")
    c = img.at(x, y)
    node = tree
    while isinstance(node, Node):
        dx, dy = table.xy(node.offset)
        st = pixel_state(c, img.at(x + dx, y + dy), t)
        node = (node.d, node.s, node.b)[int(st)]
    return bool(node.cls)


def _classify_flat(ct: CompiledTree, flat: np.ndarray, width: int,
                   pos: np.ndarray, t, start: np.ndarray | None = None) -> np.ndarray:
    """Vectorized tree walk over flattened pixel positions.

    ``t`` may be a scalar or a per-position array. The walk is
    level-synchronous: every still-active position advances one tree level per
    pass (so the shared first tests run batched over the whole block), and
    positions reaching a leaf drop out of the working set. ``start`` can seed
    per-position node ids (negative = already-decided leaf codes).
    """
    n = pos.shape[0]
    out = np.empty(n, dtype=bool)
    if n == 0:
        return out
    if start is None:
        if ct.root < 0:
            out[:] = ct.root == -2
            return out
        cur = np.full(n, ct.root, dtype=np.int32)
    else:
        cur = start.astype(np.int32, copy=True)
    centre = flat[pos].astype(np.int16)
    hi = centre + t
    lo = centre - t
    deltas = ct.dy.astype(np.int64) * width + ct.dx
    children = np.ascontiguousarray(ct.children)

    active = np.arange(n, dtype=np.intp)
    pos_a, hi_a, lo_a = pos, hi, lo
    while True:
        done = cur < 0
        if done.any():
            out[active[done]] = cur[done] == -2
            keep = ~done
            active = active[keep]
            cur = cur[keep]
            pos_a = pos_a[keep]
            hi_a = hi_a[keep]
            lo_a = lo_a[keep]
        if not active.size:
            return out
        ring = flat[pos_a + deltas[cur]].astype(np.int16)
        st = (ring >= hi_a).view(np.int8) - (ring <= lo_a).view(np.int8)
        cur = children[cur, st.astype(np.intp) + 1]


def _shared_first_two(ct: CompiledTree):
    """Dense-evaluation plan when the root's non-leaf children all test one
    offset (the forced-shared-second-test shape): the first two levels then
    reduce to two whole-array comparisons and a 9-entry routing table."""
    if ct.root < 0:
        return None
    root = ct.root
    kids = ct.children[root]
    second = {(int(ct.dx[k]), int(ct.dy[k])) for k in kids if k >= 0}
    if len(second) != 1:
        return None
    (dx2, dy2), = second
    lut = np.empty(9, dtype=np.int32)
    for s1 in range(3):
        k = int(kids[s1])
        for s2 in range(3):
            lut[s1 * 3 + s2] = k if k < 0 else int(ct.children[k, s2])
    return int(ct.dx[root]), int(ct.dy[root]), dx2, dy2, lut


def _detect_block(ct: CompiledTree, img: GrayImage, t: int, margin: int,
                  y0: int, y1: int, plan) -> np.ndarray:
    """Raster-sorted flat hit positions for interior rows [y0, y1)."""
    flat = img.pixels.ravel()
    w = img.width
    pos = _interior_flat_positions(img, margin, y0, y1)
    if plan is None:
        res = _classify_flat(ct, flat, w, pos, t)
        return pos[res]

    dx1, dy1, dx2, dy2, lut = plan
    a = img.pixels
    x1 = w - margin
    c = a[y0:y1, margin:x1].astype(np.int16)
    hi = c + t
    lo = c - t
    r1 = a[y0 + dy1 : y1 + dy1, margin + dx1 : x1 + dx1]
    st1 = (r1 >= hi).view(np.int8) - (r1 <= lo).view(np.int8)
    r2 = a[y0 + dy2 : y1 + dy2, margin + dx2 : x1 + dx2]
    st2 = (r2 >= hi).view(np.int8) - (r2 <= lo).view(np.int8)
    cur = lut[(st1 * np.int8(3) + st2 + np.int8(4)).ravel()]
    hits = [pos[cur == -2]]
    live = cur >= 0
    if live.any():
        pos_live = pos[live]
        res = _classify_flat(ct, flat, w, pos_live, t, start=cur[live])
        hits.append(pos_live[res])
    return np.sort(np.concatenate(hits))


def classify_positions(tree: TernaryTree, img: GrayImage, xs, ys, t,
                       table: OffsetTable = RING16) -> np.ndarray:
    """Vectorized classification at explicit positions; ``t`` may be an array."""
    ct = tree if isinstance(tree, CompiledTree) else compile_tree(tree, table)
    flat = img.pixels.ravel()
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    return _classify_flat(ct, flat, img.width, ys * img.width + xs, t)


def _interior_flat_positions(img: GrayImage, margin: int,
                             y0: int, y1: int) -> np.ndarray:
    xs = np.arange(margin, img.width - margin, dtype=np.int64)
    ys = np.arange(y0, y1, dtype=np.int64)
    return (ys[:, None] * img.width + xs[None, :]).ravel()


def detect(tree: TernaryTree, img: GrayImage, t: int,
           table: OffsetTable = RING16, strategy: str = "batch",
           strips: int = 1) -> np.ndarray:
    """All interior positions the tree classifies as corners, raster order.

    ``strategy`` "batch" evaluates the tree level-wise over whole pixel blocks;
    "naive" walks the tree pixel by pixel. Both give identical output, as does
    any horizontal ``strips`` count (strip results concatenate in raster
    order).
    """
    if t < 1:
        raise ValueError("threshold must be >= 1")
    if isinstance(tree, CompiledTree):
        table = tree.table
    margin = table.margin
    h, w = img.height, img.width
    if h <= 2 * margin or w <= 2 * margin:
        return np.zeros((0, 2), dtype=np.int32)

    if strategy == "naive":
        if isinstance(tree, CompiledTree):
            raise ValueError("naive strategy walks the node tree, not a compiled one")
        hits = [(x, y)
                for y in range(margin, h - margin)
                for x in range(margin, w - margin)
                if classify_pixel(tree, img, (x, y), t, table)]
        return np.asarray(hits, dtype=np.int32).reshape(-1, 2)
    if strategy != "batch":
        raise ValueError(f"unknown strategy {strategy!r}")

    ct = tree if isinstance(tree, CompiledTree) else compile_tree(tree, table)
    plan = _shared_first_two(ct)
    rows = np.linspace(margin, h - margin, max(1, strips) + 1).astype(int)
    found = [_detect_block(ct, img, t, margin, y0, y1, plan)
             for y0, y1 in zip(rows[:-1], rows[1:]) if y0 < y1]
    if not found:
        return np.zeros((0, 2), dtype=np.int32)
    hit = np.concatenate(found)
    return np.column_stack([hit % w, hit // w]).astype(np.int32)


def corner_score_bisect(tree: TernaryTree, img: GrayImage, p: tuple[int, int],
                        table: OffsetTable = RING16) -> int:
    """Largest t in [1, 255] at which the pixel classifies as a corner,
    found by binary search on the (monotone) classification."""
    if not classify_pixel(tree, img, p, 1, table):
        raise NotACornerError(f"{p} is not a corner at t=1")
    lo, hi = 1, 255
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if classify_pixel(tree, img, p, mid, table):
            lo = mid
        else:
            hi = mid - 1
    return lo


def score_positions_bisect(tree: TernaryTree, img: GrayImage, xs, ys,
                           known_true_t: int = 1,
                           table: OffsetTable = RING16) -> np.ndarray:
    """Vectorized bisection scores for positions already known to classify
    true at ``known_true_t``."""
    ct = tree if isinstance(tree, CompiledTree) else compile_tree(tree, table)
    flat = img.pixels.ravel()
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    pos = ys * img.width + xs
    lo = np.full(pos.shape, known_true_t, dtype=np.int16)
    hi = np.full(pos.shape, 255, dtype=np.int16)
    while True:
        active = np.flatnonzero(lo < hi)
        if not active.size:
            break
        mid = (lo[active] + hi[active] + 1) // 2
        res = _classify_flat(ct, flat, img.width, pos[active], mid)
        lo[active[res]] = mid[res]
        hi[active[~res]] = mid[~res] - 1
    return lo.astype(np.int32)


def corner_score_iterate(tree: TernaryTree, img: GrayImage, p: tuple[int, int],
                         table: OffsetTable = RING16) -> int:
    """Score by repeatedly raising t just past the weakest passing ring pixel.

    A ring pixel passes at threshold t when it differs from the centre by at
    least t; raising t by the minimum pass margin plus one forces a different
    path through the tree. Valid for segment-test trees over the 16-ring,
    where states are a pure function of the ring differences.
    """
    if table is not RING16 and len(table) != 16:
        raise ValueError("iteration scoring is defined for the 16-ring only")
    x, y = p
    if not classify_pixel(tree, img, p, 1, table):
        raise NotACornerError(f"{p} is not a corner at t=1")
    c = img.at(x, y)
    diffs = [abs(img.at(x + dx, y + dy) - c) for dx, dy in
             (table.xy(i) for i in table.indices())]
    t = 1
    while True:
        margins = [d - t for d in diffs if d >= t]
        if not margins:
            # Tree claims corner with an all-similar ring; not a segment tree.
            raise NotACornerError(f"{p}: no passing ring pixel at t={t}")
        best = min(t + min(margins), 255)
        if best >= 255:
            return 255
        t = best + 1
        if not classify_pixel(tree, img, p, t, table):
            return best


def _nms_keep_field(field: np.ndarray) -> np.ndarray:
    """Keep mask for 3x3 non-maximal suppression over a score field.

    A cell survives iff no 8-neighbor scores strictly greater and no
    raster-earlier neighbor scores equal (deterministic plateau rule).
    """
    h, w = field.shape
    keep = np.ones((h, w), dtype=bool)
    earlier = ((-1, -1), (0, -1), (1, -1), (-1, 0))
    later = ((1, 0), (-1, 1), (0, 1), (1, 1))

    def shifted_view(dx, dy):
        # neighbor value at (x+dx, y+dy) aligned to the valid core
        return (
            field[max(0, dy) : h + min(0, dy), max(0, dx) : w + min(0, dx)],
            (slice(max(0, -dy), h + min(0, -dy)), slice(max(0, -dx), w + min(0, -dx))),
        )

    for dx, dy in earlier:
        neigh, core = shifted_view(dx, dy)
        keep[core] &= field[core] > neigh
    for dx, dy in later:
        neigh, core = shifted_view(dx, dy)
        keep[core] &= field[core] >= neigh
    return keep


def nonmax_suppress(points) -> list[Keypoint]:
    """3x3 non-maximal suppression over scored keypoints.

    Keeps a point iff no 8-neighbor keypoint has a strictly greater score and,
    among equal-score neighbors, it is the raster-first. Output in raster
    order.
    """
    pts = list(points)
    if not pts:
        return []
    xs = np.array([kp.x for kp in pts])
    ys = np.array([kp.y for kp in pts])
    x0, y0 = int(xs.min()), int(ys.min())
    bw, bh = int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1
    if bw * bh <= 4 * len(pts) + 10_000_000:
        grid = np.full((bh, bw), -np.inf)
        grid[ys - y0, xs - x0] = [kp.score for kp in pts]
        keep = _nms_keep_field(grid)
        kept = [kp for kp in pts if keep[kp.y - y0, kp.x - x0]]
        return sorted(kept, key=_raster_key)

    scores = {(kp.x, kp.y): kp.score for kp in pts}
    out = []
    for kp in pts:
        ok = True
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                s = scores.get((kp.x + dx, kp.y + dy))
                if s is None:
                    continue
                if s > kp.score or (s == kp.score and (dy, dx) < (0, 0)):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.append(kp)
    return sorted(out, key=_raster_key)


def top_n_by_score(points, n: int, split_ties: bool = False) -> list[Keypoint]:
    """The n highest-score keypoints, score-descending (raster within ties).

    By default the cut never splits a score tie class: the returned count is
    the achievable count closest to n (ties between equally-close counts go to
    the smaller), mirroring threshold-controlled detectors where the feature
    count cannot be chosen arbitrarily. With ``split_ties`` the cut is exact
    and ties at the boundary break by raster order.
    """
    pts = sorted(points, key=lambda kp: (-kp.score, kp.y, kp.x))
    if n <= 0:
        return []
    if n >= len(pts):
        return pts
    if split_ties:
        return pts[:n]
    boundaries = [0]
    for i in range(1, len(pts)):
        if pts[i].score != pts[i - 1].score:
            boundaries.append(i)
    boundaries.append(len(pts))
    best = min(boundaries, key=lambda b: (abs(b - n), b))
    return pts[:best]


def suppress_scored_arrays(xs, ys, scores, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-native 3x3 NMS for positive integer-scored detections.

    Same keep rule as ``nonmax_suppress``; returns surviving (xs, ys, scores)
    in raster order.
    """
    grid = np.zeros(shape, dtype=np.int32)
    grid[ys, xs] = scores
    keep = _nms_keep_field(grid) & (grid > 0)
    kys, kxs = np.nonzero(keep)
    return kxs.astype(np.int32), kys.astype(np.int32), grid[kys, kxs]


def scored_keypoint_arrays(tree: TernaryTree, img: GrayImage, t: int = 1,
                           table: OffsetTable = RING16,
                           strips: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detect at threshold t, score by bisection, suppress; array form."""
    ct = tree if isinstance(tree, CompiledTree) else compile_tree(tree, table)
    pos = detect(ct, img, t, strips=strips)
    if not len(pos):
        empty = np.zeros(0, dtype=np.int32)
        return empty, empty, empty
    scores = score_positions_bisect(ct, img, pos[:, 0], pos[:, 1], known_true_t=t)
    return suppress_scored_arrays(pos[:, 0], pos[:, 1], scores, img.shape)


def scored_keypoints(tree: TernaryTree, img: GrayImage, t: int = 1,
                     table: OffsetTable = RING16, strips: int = 1) -> list[Keypoint]:
    """Detect at threshold t, score by bisection, then suppress non-maxima."""
    xs, ys, scores = scored_keypoint_arrays(tree, img, t, table, strips)
    return [Keypoint(int(x), int(y), int(s)) for x, y, s in zip(xs, ys, scores)]


def format_score(score: float) -> str:
    return str(int(score)) if float(score).is_integer() else repr(float(score))


def write_keypoints(f, points, header_lines=()) -> None:
    """Write "x y score" lines in raster order; header lines are '#'-prefixed."""
    for line in header_lines:
        f.write(f"# {line}\n")
    for kp in sorted(points, key=_raster_key):
        f.write(f"{kp.x} {kp.y} {format_score(kp.score)}\n")


def read_keypoints(f) -> list[Keypoint]:
    out = []
    for lineno, line in enumerate(f, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'x y score', got {line!r}")
        out.append(Keypoint(int(parts[0]), int(parts[1]), float(parts[2])))
    return out
