"""Repeatability-optimized detector trees via simulated annealing.

The genome is a ternary tree over a 48-offset neighborhood, applied sixteen
times per pixel (four 90-degree rotations x reflection x intensity inversion,
OR-ed together) so the detector is symmetric by construction. Candidate trees
are scored by a multiplicative cost combining repeatability on training
frames, per-frame corner density, and tree size; proposals are accepted by
the Boltzmann criterion under an exponentially decaying temperature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .image import GrayImage
from .learn import InconsistentLabelsError, TrainingSet, build_tree
from .runtime import _classify_flat
from .trees import (CompiledTree, LEAF0, Leaf, Node, OffsetTable, TernaryTree,
                    tree_size)
from .warp import project_points

PINNED_FIRST_OFFSET = (-1, 4)  # index 0 whenever the configured table has it


def default_offsets_48() -> OffsetTable:
    """Shipped default: the 48 cells of the 7x7 neighborhood minus the centre,
    raster order, indexed 0..47.

    This table does not contain the conventional first offset (-1, 4); when a
    configured table does, ``offset_table_48`` remaps it to index 0. The 7x7
    box is closed under rotations and reflections, which makes the sixteen-fold
    detector an exact function of the 48 pixel states (distillation relies on
    this).
    """
    cells = [(dx, dy) for dy in range(-3, 4) for dx in range(-3, 4)
             if (dx, dy) != (0, 0)]
    return OffsetTable("grid48", tuple(cells), index_base=0)


def offset_table_48(pairs) -> OffsetTable:
    """Build a 48-offset table from configuration, pinning (-1, 4) to index 0
    whenever present."""
    cells = [(int(dx), int(dy)) for dx, dy in pairs]
    if len(cells) != 48:
        raise ValueError(f"need exactly 48 offsets, got {len(cells)}")
    if PINNED_FIRST_OFFSET in cells and cells[0] != PINNED_FIRST_OFFSET:
        cells.remove(PINNED_FIRST_OFFSET)
        cells.insert(0, PINNED_FIRST_OFFSET)
    return OffsetTable("custom48", tuple(cells), index_base=0)


# The eight dihedral maps (dx, dy) -> (a*dx + b*dy, c*dx + d*dy).
_DIHEDRAL = []
_rot = (1, 0, 0, 1)
for _ in range(4):
    a, b, c, d = _rot
    _DIHEDRAL.append((a, b, c, d))
    _DIHEDRAL.append((-a, b, -c, d))  # composed with x-flip
    _rot = (-c, -d, a, b)  # quarter turn


def _variants(ct: CompiledTree):
    """The 16 transformed views of a compiled tree (8 spatial x inversion).

    Spatial transforms act on the offsets; intensity inversion swaps the
    darker/brighter branch targets. Leaf classes are untouched.
    """
    out = []
    for a, b, c, d in _DIHEDRAL:
        dx = a * ct.dx + b * ct.dy
        dy = c * ct.dx + d * ct.dy
        for invert in (False, True):
            kids = ct.children[:, ::-1] if invert else ct.children
            out.append(SimpleNamespace(root=ct.root, dx=dx, dy=dy, children=kids))
    return out


def _interior_flat(img: GrayImage, margin: int) -> np.ndarray:
    xs = np.arange(margin, img.width - margin, dtype=np.int64)
    ys = np.arange(margin, img.height - margin, dtype=np.int64)
    return (ys[:, None] * img.width + xs[None, :]).ravel()


def _sixteenfold_on_positions(variants, img: GrayImage, pos: np.ndarray,
                              t) -> np.ndarray:
    """OR of the 16 applications at flat positions; later variants only
    evaluate pixels still undetected."""
    flat = img.pixels.ravel()
    detected = np.zeros(pos.shape[0], dtype=bool)
    for var in variants:
        active = np.flatnonzero(~detected)
        if not active.size:
            break
        tv = t if np.isscalar(t) else t[active]
        res = _classify_flat(var, flat, img.width, pos[active], tv)
        detected[active[res]] = True
    return detected


def apply_sixteenfold(tree: TernaryTree, img: GrayImage, t: int,
                      table: OffsetTable | None = None) -> np.ndarray:
    """Boolean corner field of the symmetrized detector (borders False)."""
    table = table or default_offsets_48()
    margin = table.margin
    field = np.zeros((img.height, img.width), dtype=bool)
    if img.height <= 2 * margin or img.width <= 2 * margin:
        return field
    ct = CompiledTree(tree, table)
    pos = _interior_flat(img, margin)
    hit = _sixteenfold_on_positions(_variants(ct), img, pos, t)
    field.ravel()[pos[hit]] = True
    return field


def sixteenfold_classify_positions(tree: TernaryTree, img: GrayImage, xs, ys,
                                   t, table: OffsetTable | None = None) -> np.ndarray:
    table = table or default_offsets_48()
    ct = CompiledTree(tree, table)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    return _sixteenfold_on_positions(_variants(ct), img,
                                     ys * img.width + xs, t)


@dataclass(frozen=True)
class CostWeights:
    """Optimization parameters; defaults are the reference operating point.

    w_r weights repeatability, w_n scales per-frame corner counts, w_s scales
    tree size; alpha/beta shape the temperature schedule; t is the fixed
    detection threshold; epsilon the matching radius.
    """

    w_r: float = 1.0
    w_n: float = 3500.0
    w_s: float = 10000.0
    alpha: float = 30.0
    beta: float = 100.0
    t: int = 35
    i_max: int = 100_000
    runs: int = 100
    epsilon: float = 5.0

    def __post_init__(self):
        for name in ("w_r", "w_n", "w_s", "alpha", "beta", "t", "i_max",
                     "runs", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


def cost_from_parts(repeatability: float, per_frame_counts, size: int,
                    weights: CostWeights) -> float:
    """(1 + (w_r/r)^2) * (1 + mean((d_i/w_n)^2)) * (1 + (s/w_s)^2);
    +inf when repeatability is zero."""
    if repeatability <= 0:
        return math.inf
    d = np.asarray(per_frame_counts, dtype=np.float64)
    f_rep = 1.0 + (weights.w_r / repeatability) ** 2
    f_count = 1.0 + float(np.mean((d / weights.w_n) ** 2)) if d.size else 1.0
    f_size = 1.0 + (size / weights.w_s) ** 2
    return f_rep * f_count * f_size


def cost(tree: TernaryTree, repeatability: float, per_frame_counts,
         weights: CostWeights) -> float:
    return cost_from_parts(repeatability, per_frame_counts, tree_size(tree),
                           weights)


def temperature(iteration: int, weights: CostWeights) -> float:
    """Exponential schedule beta * exp(-alpha * I / I_max)."""
    return weights.beta * math.exp(-weights.alpha * iteration / weights.i_max)


def check_s_constraint(tree: TernaryTree) -> bool:
    """Every leaf hanging on an s branch of its direct parent has class 0."""
    stack = [tree]
    while stack:
        t = stack.pop()
        if isinstance(t, Node):
            if isinstance(t.s, Leaf) and t.s.cls != 0:
                return False
            stack.extend((t.b, t.s, t.d))
    return True


def random_depth1_tree(rng: np.random.Generator, table: OffsetTable) -> Node:
    """One decision node with random leaves; the s leaf is constrained to 0."""
    idx = table.index_base + int(rng.integers(0, len(table)))
    return Node(idx,
                b=Leaf(int(rng.integers(0, 2))),
                s=LEAF0,
                d=Leaf(int(rng.integers(0, 2))))


def _positions(tree: TernaryTree):
    """(path, subtree, hangs_on_s_branch) for every tree position."""
    out = []

    def rec(t: TernaryTree, path: tuple, on_s: bool) -> None:
        out.append((path, t, on_s))
        if isinstance(t, Node):
            rec(t.b, path + ("b",), False)
            rec(t.s, path + ("s",), True)
            rec(t.d, path + ("d",), False)

    rec(tree, (), False)
    return out


def _replace(tree: TernaryTree, path: tuple, new: TernaryTree) -> TernaryTree:
    if not path:
        return new
    assert isinstance(tree, Node)
    head = path[0]
    return Node(tree.offset,
                b=_replace(tree.b, path[1:], new) if head == "b" else tree.b,
                s=_replace(tree.s, path[1:], new) if head == "s" else tree.s,
                d=_replace(tree.d, path[1:], new) if head == "d" else tree.d)


_SLOTS = ("b", "s", "d")


def mutate(tree: TernaryTree, rng: np.random.Generator, table: OffsetTable,
           with_info: bool = False):
    """One random structural mutation, preserving the s-leaf constraint.

    A uniformly chosen position is mutated: a leaf either grows into a random
    depth-1 subtree or flips class (flip unavailable when constrained); a
    decision node either gets a fresh random offset, collapses to a
    constraint-respecting random leaf, or has one randomly chosen branch
    overwritten by a copy of another.
    """
    positions = _positions(tree)
    path, target, on_s = positions[int(rng.integers(0, len(positions)))]

    if isinstance(target, Leaf):
        if on_s or int(rng.integers(0, 2)) == 0:
            new, what = random_depth1_tree(rng, table), "grow"
        else:
            new, what = Leaf(1 - target.cls), "flip"
    else:
        choice = int(rng.integers(0, 3))
        if choice == 0:
            idx = table.index_base + int(rng.integers(0, len(table)))
            new = Node(idx, b=target.b, s=target.s, d=target.d)
            what = "offset"
        elif choice == 1:
            cls = 0 if on_s else int(rng.integers(0, 2))
            new, what = Leaf(cls), "collapse"
        else:
            pairs = [
                (src, dst)
                for src in _SLOTS for dst in _SLOTS if src != dst
                and not (dst == "s"
                         and isinstance(getattr(target, src), Leaf)
                         and getattr(target, src).cls == 1)
            ]
            src, dst = pairs[int(rng.integers(0, len(pairs)))]
            kwargs = {slot: getattr(target, slot) for slot in _SLOTS}
            kwargs[dst] = kwargs[src]
            new, what = Node(target.offset, **kwargs), "copy"

    mutated = _replace(tree, path, new)
    if with_info:
        return mutated, {"kind": "leaf" if isinstance(target, Leaf) else "node",
                         "what": what, "path": path}
    return mutated


class _PairMatch:
    """Precomputed matching geometry for one ordered frame pair.

    For every interior pixel of the source frame with a valid projection,
    stores the flat indices of all integer target positions within epsilon of
    the projection. Matching a candidate detector is then two gathers and a
    segment reduction, exact against brute-force nearest neighbor.
    """

    __slots__ = ("src_flat", "cand_ptr", "cand_flat")

    def __init__(self, frame_i: GrayImage, frame_j: GrayImage, warp,
                 margin: int, epsilon: float):
        xs = np.arange(margin, frame_i.width - margin, dtype=np.int64)
        ys = np.arange(margin, frame_i.height - margin, dtype=np.int64)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
        proj, valid = project_points(warp, pts)
        self.src_flat = (pts[valid, 1].astype(np.int64) * frame_i.width
                         + pts[valid, 0].astype(np.int64))
        pv = proj[valid]
        c = int(math.ceil(epsilon))
        eps2 = float(epsilon) ** 2
        bx = np.floor(pv[:, 0]).astype(np.int64)
        by = np.floor(pv[:, 1]).astype(np.int64)
        wj, hj = frame_j.width, frame_j.height
        cand_masks = []
        cand_flats = []
        for ox in range(-c, c + 2):
            for oy in range(-c, c + 2):
                cx = bx + ox
                cy = by + oy
                d2 = (cx - pv[:, 0]) ** 2 + (cy - pv[:, 1]) ** 2
                ok = (d2 <= eps2) & (cx >= 0) & (cx < wj) & (cy >= 0) & (cy < hj)
                cand_masks.append(ok)
                cand_flats.append(cy * wj + cx)
        masks = np.stack(cand_masks, axis=1)  # (S, D)
        flats = np.stack(cand_flats, axis=1)
        counts = masks.sum(axis=1)
        self.cand_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.cand_flat = flats[masks]

    def counts(self, det_i_flat: np.ndarray, det_j_flat: np.ndarray) -> tuple[int, int]:
        useful = det_i_flat[self.src_flat]
        hits = det_j_flat[self.cand_flat]
        cs = np.concatenate([[0], np.cumsum(hits)])
        seg_any = (cs[self.cand_ptr[1:]] - cs[self.cand_ptr[:-1]]) > 0
        return int(useful.sum()), int((useful & seg_any).sum())


class CostEvaluator:
    """Evaluates Eq-style detector cost on fixed training frames and warps."""

    def __init__(self, frames, warps, weights: CostWeights,
                 table: OffsetTable, pairs):
        self.frames = list(frames)
        if not self.frames:
            raise ValueError("empty training set")
        self.weights = weights
        self.table = table
        margin = table.margin
        self.positions = [_interior_flat(f, margin) for f in self.frames]
        self.pairs = list(pairs)
        self.matchers = {}
        for i, j in self.pairs:
            if (i, j) not in warps:
                raise KeyError(f"no warp for training pair ({i}, {j})")
            self.matchers[(i, j)] = _PairMatch(
                self.frames[i], self.frames[j], warps[(i, j)], margin,
                weights.epsilon)

    def detect_fields(self, tree: TernaryTree) -> list[np.ndarray]:
        ct = CompiledTree(tree, self.table)
        variants = _variants(ct)
        fields = []
        for frame, pos in zip(self.frames, self.positions):
            hit = _sixteenfold_on_positions(variants, frame, pos, self.weights.t)
            field = np.zeros(frame.height * frame.width, dtype=bool)
            field[pos[hit]] = True
            fields.append(field)
        return fields

    def evaluate(self, tree: TernaryTree) -> tuple[float, float, list[int]]:
        """(cost, repeatability, per-frame detection counts), detections
        counted before any suppression."""
        fields = self.detect_fields(tree)
        d_counts = [int(f.sum()) for f in fields]
        tot_useful = tot_rep = 0
        for (i, j), matcher in self.matchers.items():
            useful, rep = matcher.counts(fields[i], fields[j])
            tot_useful += useful
            tot_rep += rep
        r = tot_rep / tot_useful if tot_useful else 0.0
        return cost_from_parts(r, d_counts, tree_size(tree), self.weights), r, d_counts


@dataclass
class AnnealState:
    """Mutable optimizer state; ``best_cost`` never exceeds any accepted cost."""

    tree: TernaryTree
    cost: float
    best_tree: TernaryTree
    best_cost: float
    iteration: int
    temperature: float
    rng: np.random.Generator


@dataclass(frozen=True)
class AnnealResult:
    best_tree: TernaryTree
    best_cost: float
    trace: np.ndarray  # rows: iteration, cost, best_cost, temperature
    seed: int


def anneal(frames, warps, weights: CostWeights, seed: int,
           table: OffsetTable | None = None, pairs=None) -> AnnealResult:
    """Run one simulated-annealing optimization.

    Starts from a random depth-1 tree; per iteration, mutates the current
    tree, evaluates the cost (the symmetrized detector runs on every frame),
    and accepts with probability min(1, exp((k_cur - k_new) / T)) under the
    exponential temperature schedule. Deterministic for a fixed seed.
    """
    from .repeatability import make_pairs

    table = table or default_offsets_48()
    frames = list(frames)
    if pairs is None:
        pairs = make_pairs(len(frames))
    ev = CostEvaluator(frames, warps, weights, table, pairs)
    rng = np.random.default_rng(seed)

    tree = random_depth1_tree(rng, table)
    k_cur, _, _ = ev.evaluate(tree)
    state = AnnealState(tree=tree, cost=k_cur, best_tree=tree, best_cost=k_cur,
                        iteration=0, temperature=weights.beta, rng=rng)
    trace = [(0.0, k_cur, k_cur, weights.beta)]

    for it in range(1, weights.i_max + 1):
        temp = temperature(it, weights)
        candidate = mutate(state.tree, rng, table)
        k_new, _, _ = ev.evaluate(candidate)
        if k_new <= state.cost:
            accept = True
        else:
            arg = (state.cost - k_new) / temp
            p = math.exp(arg) if arg > -745.0 else 0.0
            accept = rng.random() < p
        if accept:
            state.tree = candidate
            state.cost = k_new
            if k_new < state.best_cost:
                state.best_tree = candidate
                state.best_cost = k_new
        state.iteration = it
        state.temperature = temp
        trace.append((float(it), state.cost, state.best_cost, temp))

    return AnnealResult(best_tree=state.best_tree, best_cost=state.best_cost,
                        trace=np.asarray(trace, dtype=np.float64), seed=seed)


def multi_run(frames, warps, weights: CostWeights, n_runs: int,
              seeds=None, base_seed: int = 0, jobs: int = 1,
              table: OffsetTable | None = None) -> tuple[AnnealResult, list[AnnealResult]]:
    """Independent annealing runs over different seeds; returns the
    minimum-cost result plus every run (traces included)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if seeds is None:
        seeds = [base_seed + k for k in range(n_runs)]
    seeds = list(seeds)
    if len(seeds) != n_runs:
        raise ValueError("need one seed per run")

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(anneal, frames, warps, weights, s, table)
                       for s in seeds]
            results = [f.result() for f in futures]
    else:
        results = [anneal(frames, warps, weights, s, table) for s in seeds]
    best = min(results, key=lambda r: (r.best_cost, r.seed))
    return best, results


def distill(tree: TernaryTree, images, t: int = 35,
            table: OffsetTable | None = None) -> TernaryTree:
    """Learn one unsymmetrized tree reproducing the sixteen-fold detector.

    Every interior pixel of the given images is labelled by the symmetrized
    detector and described by its 48 ternary offset states; the ID3 learner
    then builds a single tree with perfect training accuracy. Requires the
    offset table to be closed under the dihedral symmetries (the default is),
    otherwise labels need not be a function of the states.
    """
    table = table or default_offsets_48()
    margin = table.margin
    state_blocks = []
    label_blocks = []
    for img in images:
        h, w = img.height, img.width
        if h <= 2 * margin or w <= 2 * margin:
            continue
        field = apply_sixteenfold(tree, img, t, table)
        a = img.pixels.astype(np.int16)
        centre = a[margin : h - margin, margin : w - margin]
        hi = centre + t
        lo = centre - t
        n = centre.size
        states = np.empty((n, len(table)), dtype=np.uint8)
        for col, (dx, dy) in enumerate(table.offsets):
            r = a[margin + dy : h - margin + dy, margin + dx : w - margin + dx]
            st = 1 + (r >= hi).view(np.int8) - (r <= lo).view(np.int8)
            states[:, col] = st.ravel().astype(np.uint8)
        state_blocks.append(states)
        label_blocks.append(field[margin : h - margin, margin : w - margin].ravel())
    if not state_blocks:
        raise ValueError("no interior pixels to distill from")

    states = np.concatenate(state_blocks)
    labels = np.concatenate(label_blocks)
    key = np.ascontiguousarray(states).view(
        np.dtype((np.void, states.shape[1])))[:, 0]
    uniq, first, inverse, counts = np.unique(
        key, return_index=True, return_inverse=True, return_counts=True)
    true_per_group = np.bincount(inverse, weights=labels.astype(np.float64))
    mixed = (true_per_group > 0) & (true_per_group < counts)
    if mixed.any():
        raise InconsistentLabelsError(
            "sixteen-fold labels are not a function of the offset states; "
            "is the offset table closed under rotation/reflection?")
    ts = TrainingSet(
        states=np.asfortranarray(states[first]),
        labels=true_per_group > 0,
        weights=counts.astype(np.int64),
        offsets=table,
    )
    return build_tree(ts)
