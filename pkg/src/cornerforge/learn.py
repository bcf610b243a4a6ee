"""ID3 compilation of the segment test into a ternary decision tree.

Training data is a weighted set of distinct neighborhood state vectors
(16 ring states, or 48 states for the wide-offset detector) with boolean
corner labels. Splitting maximizes total information gain measured in
weighted-count units; recursion stops exactly at zero-entropy subsets, so a
label-consistent training set is always classified perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import GrayImage
from .segment import N_CONFIGS, N_RING, config_field, config_labels, label_all_configs
from .trees import (LEAF0, LEAF1, Leaf, Node, OffsetTable, RING16, TernaryTree,
                    merge_tree, tree_depth)


class InconsistentLabelsError(ValueError):
    """The same state vector appears with both labels."""


@dataclass(frozen=True)
class TrainingSet:
    """Distinct state vectors with labels and multiplicity weights.

    ``states`` is (N, k) uint8 with column j holding the ternary state of
    offset ``offsets.index_base + j``; ``weights`` of None means unit weights.
    """

    states: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None
    offsets: OffsetTable

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.dtype != np.uint8:
            raise ValueError("states must be a 2-d uint8 array")
        if self.states.shape[1] != len(self.offsets):
            raise ValueError(f"states have {self.states.shape[1]} columns for "
                             f"{len(self.offsets)} offsets")
        if self.labels.shape != (self.states.shape[0],):
            raise ValueError("labels shape mismatch")
        if self.weights is not None:
            if self.weights.shape != self.labels.shape:
                raise ValueError("weights shape mismatch")
            if (self.weights < 0).any():
                raise ValueError("weights must be >= 0")

    @property
    def num_records(self) -> int:
        return self.states.shape[0]

    def weight_of(self, i: int) -> int:
        return 1 if self.weights is None else int(self.weights[i])

    def class_counts(self) -> tuple[float, float]:
        """(corner weight c, non-corner weight cbar) over the whole set."""
        if self.weights is None:
            c = float(np.count_nonzero(self.labels))
            return c, float(self.labels.size - c)
        w = self.weights.astype(np.float64)
        c = float(w[self.labels].sum())
        return c, float(w.sum() - c)

    def check_consistent(self) -> None:
        """Raise if any duplicated state row carries both labels (test aid)."""
        order = np.lexsort(self.states.T[::-1])
        srt = self.states[order]
        lab = self.labels[order]
        same = (srt[1:] == srt[:-1]).all(axis=1)
        if (same & (lab[1:] != lab[:-1])).any():
            raise InconsistentLabelsError("conflicting labels for equal state rows")


_FULL_STATES: np.ndarray | None = None


def full_state_matrix() -> np.ndarray:
    """(3^16, 16) uint8 matrix of every ring configuration, row r = config r.

    Cached for the process lifetime (~690 MB); column-major so per-column
    gathers during tree building stay contiguous.
    """
    global _FULL_STATES
    if _FULL_STATES is None:
        m = np.empty((N_CONFIGS, N_RING), dtype=np.uint8, order="F")
        base = np.array([0, 1, 2], dtype=np.uint8)
        for i in range(N_RING):
            m[:, i] = np.tile(np.repeat(base, 3**i), 3 ** (N_RING - 1 - i))
        m.setflags(write=False)
        _FULL_STATES = m
    return _FULL_STATES


def states_from_codes(codes: np.ndarray) -> np.ndarray:
    """Decode packed config codes into an (N, 16) uint8 state matrix."""
    codes = np.asarray(codes, dtype=np.int64)
    m = np.empty((codes.size, N_RING), dtype=np.uint8, order="F")
    for i in range(N_RING):
        m[:, i] = ((codes // 3**i) % 3).astype(np.uint8)
    return m


def codes_from_states(states: np.ndarray) -> np.ndarray:
    """Inverse of states_from_codes for 16-column matrices."""
    if states.shape[1] != N_RING:
        raise ValueError("packed codes exist only for 16-offset state rows")
    codes = np.zeros(states.shape[0], dtype=np.int64)
    for i in range(N_RING):
        codes += states[:, i].astype(np.int64) * 3**i
    return codes


def empty_training_set(offsets: OffsetTable = RING16) -> TrainingSet:
    return TrainingSet(
        states=np.zeros((0, len(offsets)), dtype=np.uint8),
        labels=np.zeros(0, dtype=bool),
        weights=np.zeros(0, dtype=np.int64),
        offsets=offsets,
    )


def extract_training_data(images, n: int, t: int,
                          weight_scale: int = 256) -> TrainingSet:
    """One weighted record per distinct ring configuration observed.

    Labels come from the segment test for the given arc length; weights are
    occurrence counts scaled by ``weight_scale`` so that observed data
    dominates the low-weight exhaustive padding during split selection.
    """
    images = list(images)
    if not images:
        raise ValueError("need at least one image")
    all_codes = [config_field(img, t).ravel() for img in images]
    codes = np.concatenate(all_codes) if all_codes else np.zeros(0, np.int64)
    uniq, counts = np.unique(codes, return_counts=True)
    return TrainingSet(
        states=states_from_codes(uniq),
        labels=config_labels(uniq, n),
        weights=counts.astype(np.int64) * weight_scale,
        offsets=RING16,
    )


def augment_exhaustive(ts: TrainingSet, n: int, low_weight: int = 1) -> TrainingSet:
    """Add every one of the 3^16 configurations at ``low_weight``, folding in
    any existing records by weight. The result always covers the full space,
    so the learned tree embodies the segment test exactly."""
    if low_weight < 1:
        raise ValueError("low_weight must be >= 1")
    if len(ts.offsets) != N_RING:
        raise ValueError("exhaustive augmentation applies to the 16-ring space")
    labels = label_all_configs(n)
    labels.setflags(write=False)

    if ts.num_records and ts.states is full_state_matrix():
        if not np.array_equal(ts.labels, labels):
            raise InconsistentLabelsError(
                "training labels disagree with the segment test; corrupted set")
        weights = np.full(N_CONFIGS, low_weight, dtype=np.int64)
        weights += ts.weights if ts.weights is not None else 1
    elif ts.num_records:
        codes = codes_from_states(ts.states)
        if not np.array_equal(ts.labels, labels[codes]):
            raise InconsistentLabelsError(
                "training labels disagree with the segment test; corrupted set")
        weights = np.full(N_CONFIGS, low_weight, dtype=np.int64)
        add = ts.weights if ts.weights is not None else np.ones(len(codes), np.int64)
        np.add.at(weights, codes, add)
    elif low_weight == 1:
        weights = None
    else:
        weights = np.full(N_CONFIGS, low_weight, dtype=np.int64)

    return TrainingSet(states=full_state_matrix(), labels=labels,
                       weights=weights, offsets=ts.offsets)


def entropy(c: float, cbar: float) -> float:
    """Total (un-normalized) binary entropy in weighted-count units:
    (c+cbar)*log2(c+cbar) - c*log2(c) - cbar*log2(cbar), with 0*log2(0) = 0."""
    if c < 0 or cbar < 0:
        raise ValueError("counts must be >= 0")

    def xlogx(v: float) -> float:
        return v * np.log2(v) if v > 0 else 0.0

    return xlogx(c + cbar) - xlogx(c) - xlogx(cbar)


def _entropy_vec(c: np.ndarray, cbar: np.ndarray) -> np.ndarray:
    def xlogx(v):
        out = np.zeros_like(v, dtype=np.float64)
        nz = v > 0
        out[nz] = v[nz] * np.log2(v[nz])
        return out

    return xlogx(c + cbar) - xlogx(c) - xlogx(cbar)


def _column(states: np.ndarray, subset, col: int) -> np.ndarray:
    return states[:, col] if subset is None else states[subset, col]


def _split_gains(states, labels, weights, subset) -> tuple[np.ndarray, float]:
    """Information gain per state column on a subset; also returns H(subset)."""
    lab = (labels if subset is None else labels[subset]).astype(np.uint8)
    w = None if weights is None else (weights if subset is None else weights[subset])
    combo_base = lab * np.uint8(3)
    k = states.shape[1]
    gains = np.empty(k, dtype=np.float64)
    h_parent = None
    for col in range(k):
        combo = combo_base + _column(states, subset, col)
        if w is None:
            counts = np.bincount(combo, minlength=6).astype(np.float64)
        else:
            counts = np.bincount(combo, weights=w, minlength=6)
        cbar_d, c_d = counts[:3], counts[3:]
        if h_parent is None:
            h_parent = entropy(float(c_d.sum()), float(cbar_d.sum()))
        gains[col] = h_parent - _entropy_vec(c_d, cbar_d).sum()
    return gains, float(h_parent)


def best_split(ts: TrainingSet, subset: np.ndarray | None = None) -> int:
    """Offset index with maximal information gain; ties break to the lowest
    index. Raises on a pure subset (nothing to split) and on the degenerate
    all-identical-rows case, which signals conflicting labels."""
    gains, h = _split_gains(ts.states, ts.labels, ts.weights, subset)
    if h == 0.0:
        raise ValueError("subset is pure; nothing to split")
    return ts.offsets.index_base + _pick_column(ts.states, subset, gains)


def _pick_column(states, subset, gains: np.ndarray) -> int:
    best_val = float(gains.max())
    if best_val > 1e-9:
        # Ties (within float tolerance) break to the lowest offset index.
        tol = 1e-9 * max(1.0, abs(best_val))
        return int(np.flatnonzero(gains >= best_val - tol)[0])
    # No useful gain. If every column is constant the subset consists of one
    # repeated state row with mixed labels; otherwise split on the first
    # non-constant column so recursion still makes progress.
    for col in range(states.shape[1]):
        column = _column(states, subset, col)
        if column.size and column.min() != column.max():
            return col
    raise InconsistentLabelsError(
        "zero gain everywhere with nonzero entropy: conflicting labels")


def build_tree(ts: TrainingSet, merge: bool = True) -> TernaryTree:
    """Grow the ID3 tree; every training record ends at a leaf of its own
    label. With ``merge`` (default) structurally equal subtrees are shared."""
    states, labels = ts.states, ts.labels
    weights = ts.weights
    base = ts.offsets.index_base

    def counts_of(subset) -> tuple[float, float]:
        lab = labels if subset is None else labels[subset]
        if weights is None:
            c = float(np.count_nonzero(lab))
            return c, float(lab.size - c)
        w = weights if subset is None else weights[subset]
        c = float(w[lab].sum(dtype=np.float64))
        return c, float(w.sum(dtype=np.float64) - c)

    def rec(subset) -> TernaryTree:
        c, cbar = counts_of(subset)
        if c == 0.0 and cbar == 0.0:
            return LEAF0  # zero-weight subset; class is arbitrary
        if cbar == 0.0:
            return LEAF1
        if c == 0.0:
            return LEAF0
        gains, _ = _split_gains(states, labels, weights, subset)
        col = _pick_column(states, subset, gains)
        column = _column(states, subset, col)
        kids = []
        for v in range(3):
            sel = np.flatnonzero(column == v).astype(np.int32)
            kids.append(sel if subset is None else subset[sel])
        del column, subset
        d_child = rec(kids[0])
        s_child = rec(kids[1])
        b_child = rec(kids[2])
        return Node(base + col, b=b_child, s=s_child, d=d_child)

    if ts.num_records == 0:
        raise ValueError("empty training set")
    tree = rec(None)
    return merge_tree(tree) if merge else tree


def classify_states(tree: TernaryTree, states: np.ndarray,
                    index_base: int) -> np.ndarray:
    """Route every state row through the tree; returns bool predictions."""
    n = states.shape[0]
    out = np.empty(n, dtype=bool)
    stack: list[tuple[TernaryTree, np.ndarray | None]] = [(tree, None)]
    while stack:
        t, idx = stack.pop()
        if isinstance(t, Leaf):
            if idx is None:
                out[:] = bool(t.cls)
            else:
                out[idx] = bool(t.cls)
            continue
        col = t.offset - index_base
        column = states[:, col] if idx is None else states[idx, col]
        for v, child in ((0, t.d), (1, t.s), (2, t.b)):
            sel = np.flatnonzero(column == v).astype(np.int32)
            if sel.size:
                stack.append((child, sel if idx is None else idx[sel]))
    return out


def force_shared_second_test(tree: TernaryTree, ts: TrainingSet) -> TernaryTree:
    """Rebuild so all non-leaf children of the root test one shared offset.

    The shared offset is the one maximizing the summed information gain over
    the three root subsets; below the second level the build is unconstrained.
    Training classifications are preserved (ID3 exactness).
    """
    if tree_depth(tree) < 2:
        raise ValueError("tree depth must be >= 2")
    assert isinstance(tree, Node)
    second = {c.offset for c in (tree.b, tree.s, tree.d) if isinstance(c, Node)}
    if len(second) <= 1:
        return tree

    states, labels, weights = ts.states, ts.labels, ts.weights
    base = ts.offsets.index_base
    root_col = tree.offset - base
    column = _column(states, None, root_col)
    subsets = [np.flatnonzero(column == v).astype(np.int32) for v in range(3)]

    def pure_class(subset) -> int | None:
        lab = labels[subset]
        if weights is None:
            c = int(np.count_nonzero(lab))
            cbar = lab.size - c
        else:
            w = weights[subset]
            c = float(w[lab].sum())
            cbar = float(w.sum()) - c
        if cbar == 0:
            return 1
        if c == 0:
            return 0
        return None

    total = np.zeros(states.shape[1], dtype=np.float64)
    for sub in subsets:
        if pure_class(sub) is None:
            gains, _ = _split_gains(states, labels, weights, sub)
            total += gains
    shared_col = int(np.argmax(total))
    if total[shared_col] <= 0:
        shared_col = root_col  # degenerate; keep something valid

    def rebuild(subset) -> TernaryTree:
        cls = pure_class(subset)
        if cls is not None:
            return LEAF1 if cls else LEAF0
        col2 = _column(states, subset, shared_col)
        kids = []
        for v in range(3):
            sel = subset[np.flatnonzero(col2 == v).astype(np.int32)]
            kids.append(_subtree(sel))
        return Node(base + shared_col, b=kids[2], s=kids[1], d=kids[0])

    def _subtree(subset) -> TernaryTree:
        cls = pure_class(subset)
        if cls is not None:
            return LEAF1 if cls else LEAF0
        sub_ts = TrainingSet(states=states[subset], labels=labels[subset],
                             weights=None if weights is None else weights[subset],
                             offsets=ts.offsets)
        return build_tree(sub_ts, merge=False)

    out = Node(tree.offset, b=rebuild(subsets[2]), s=rebuild(subsets[1]),
               d=rebuild(subsets[0]))
    return merge_tree(out)


_DIALECTS = {
    "c": {
        "signature": "static int {name}(const unsigned char *p, int stride, int t)",
        "pixel": "p[{idx}]",
        "centre": "p[0]",
    },
    "js": {
        "signature": "function {name}(p, base, stride, t)",
        "pixel": "p[base + ({idx})]",
        "centre": "p[base]",
    },
}


def emit_source(tree: TernaryTree, table: OffsetTable, *,
                function_name: str = "is_corner", dialect: str = "c") -> str:
    """Emit the tree as a self-contained curly-brace function.

    One conditional chain per decision node with the two boundary-inclusive
    comparisons of the ternary partition; leaves return 0/1. The emitted logic
    is classification-equivalent to interpreting the tree.
    """
    try:
        d = _DIALECTS[dialect]
    except KeyError:
        raise ValueError(f"unknown dialect {dialect!r}; have {sorted(_DIALECTS)}") from None

    lines = [d["signature"].format(name=function_name), "{"]
    centre = d["centre"]
    lines.append(f"    const int cb = {centre} + t;" if dialect == "c"
                 else f"    var cb = {centre} + t;")
    lines.append(f"    const int c_b = {centre} - t;" if dialect == "c"
                 else f"    var c_b = {centre} - t;")

    def pixel_expr(offset_index: int) -> str:
        dx, dy = table.xy(offset_index)
        return d["pixel"].format(idx=f"{dx} + {dy} * stride")

    def rec(t: TernaryTree, indent: int) -> None:
        pad = "    " * indent
        if isinstance(t, Leaf):
            lines.append(f"{pad}return {t.cls};")
            return
        px = pixel_expr(t.offset)
        lines.append(f"{pad}if ({px} >= cb) {{")
        rec(t.b, indent + 1)
        lines.append(f"{pad}}} else if ({px} <= c_b) {{")
        rec(t.d, indent + 1)
        lines.append(f"{pad}}} else {{")
        rec(t.s, indent + 1)
        lines.append(pad + "}")

    rec(tree, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"
