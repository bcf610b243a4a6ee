"""Ternary decision trees over pixel-offset tests.

A tree node tests one offset of the candidate's neighborhood and branches
three ways on the darker/similar/brighter state of that pixel; leaves carry a
0/1 class. The same structure serves the compiled segment test (16 ring
offsets, externally indexed 1..16) and the repeatability-optimized detector
(48 offsets, indexed 0..47).

File format (line oriented, LF endings, single spaces):

    FASTTREE v1 offsets=<16|48>
    [O <idx> <dx> <dy>]...      offset table, required for offsets=48
    N <offset_index>            decision node, followed by its b, s, d subtrees
    L <0|1>                     leaf

Nodes are written pre-order with children in b, s, d order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import RING_OFFSETS


class TreeFormatError(ValueError):
    """Malformed tree file."""


@dataclass(frozen=True)
class OffsetTable:
    """Offset geometry a tree's tests refer to.

    ``index_base`` is the external index of the first offset: the 16-ring is
    conventionally 1-based, the 48-offset table 0-based.
    """

    name: str
    offsets: tuple[tuple[int, int], ...]
    index_base: int

    def __post_init__(self):
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("offsets must be distinct")

    def __len__(self) -> int:
        return len(self.offsets)

    def xy(self, index: int) -> tuple[int, int]:
        """Offset for an external index."""
        row = index - self.index_base
        if not 0 <= row < len(self.offsets):
            raise ValueError(f"offset index {index} out of range for {self.name}")
        return self.offsets[row]

    def indices(self) -> range:
        return range(self.index_base, self.index_base + len(self.offsets))

    @property
    def margin(self) -> int:
        """Interior margin: the maximum Chebyshev magnitude of any offset."""
        return max(max(abs(dx), abs(dy)) for dx, dy in self.offsets)


RING16 = OffsetTable("ring16", RING_OFFSETS, index_base=1)


@dataclass(frozen=True)
class Leaf:
    cls: int

    def __post_init__(self):
        if self.cls not in (0, 1):
            raise ValueError(f"leaf class must be 0 or 1, got {self.cls}")


@dataclass(frozen=True)
class Node:
    offset: int
    b: "TernaryTree"
    s: "TernaryTree"
    d: "TernaryTree"


TernaryTree = Leaf | Node

LEAF0 = Leaf(0)
LEAF1 = Leaf(1)


def tree_size(tree: TernaryTree) -> int:
    """Number of decision nodes, counting shared subtrees once per position."""
    memo: dict[int, int] = {}

    def rec(t: TernaryTree) -> int:
        if isinstance(t, Leaf):
            return 0
        got = memo.get(id(t))
        if got is None:
            got = 1 + rec(t.b) + rec(t.s) + rec(t.d)
            memo[id(t)] = got
        return got

    return rec(tree)


def tree_depth(tree: TernaryTree) -> int:
    memo: dict[int, int] = {}

    def rec(t: TernaryTree) -> int:
        if isinstance(t, Leaf):
            return 0
        got = memo.get(id(t))
        if got is None:
            got = 1 + max(rec(t.b), rec(t.s), rec(t.d))
            memo[id(t)] = got
        return got

    return rec(tree)


def iter_nodes(tree: TernaryTree):
    """Pre-order traversal of tree positions (b, s, d); shared subtrees are
    visited once per position."""
    stack = [tree]
    while stack:
        t = stack.pop()
        yield t
        if isinstance(t, Node):
            stack.extend((t.d, t.s, t.b))


def validate_offsets(tree: TernaryTree, table: OffsetTable) -> None:
    for t in iter_nodes(tree):
        if isinstance(t, Node):
            table.xy(t.offset)  # raises on range violation


def merge_tree(tree: TernaryTree) -> TernaryTree:
    """Canonicalize bottom-up so structurally equal subtrees become shared.

    Classification is unchanged; a node whose children collapse to the same
    subtree keeps its ternary shape but the separating test can be elided by
    consumers (source emission does this).
    """
    interned: dict[tuple, TernaryTree] = {}
    canon: dict[int, TernaryTree] = {}

    def rec(t: TernaryTree) -> TernaryTree:
        got = canon.get(id(t))
        if got is not None:
            return got
        if isinstance(t, Leaf):
            key = ("L", t.cls)
            out = interned.setdefault(key, t)
        else:
            b, s, d = rec(t.b), rec(t.s), rec(t.d)
            key = ("N", t.offset, id(b), id(s), id(d))
            out = interned.get(key)
            if out is None:
                out = t if (b is t.b and s is t.s and d is t.d) else Node(t.offset, b, s, d)
                interned[key] = out
        canon[id(t)] = out
        return out

    return rec(tree)


def serialize_tree(tree: TernaryTree, table: OffsetTable) -> bytes:
    validate_offsets(tree, table)
    n = len(table)
    if n not in (16, 48):
        raise ValueError(f"unsupported offset count {n}")
    lines = [f"FASTTREE v1 offsets={n}"]
    if n == 48:
        for idx in table.indices():
            dx, dy = table.xy(idx)
            lines.append(f"O {idx} {dx} {dy}")

    def rec(t: TernaryTree) -> None:
        if isinstance(t, Leaf):
            lines.append(f"L {t.cls}")
        else:
            lines.append(f"N {t.offset}")
            rec(t.b)
            rec(t.s)
            rec(t.d)

    rec(tree)
    return ("\n".join(lines) + "\n").encode()


def deserialize_tree(data: bytes) -> tuple[TernaryTree, OffsetTable]:
    """Parse a tree file; returns the tree and its offset table."""
    text = data.decode() if isinstance(data, (bytes, bytearray)) else str(data)
    lines = text.splitlines()
    if not lines:
        raise TreeFormatError("line 1: empty input")
    header = lines[0].split()
    if (len(header) != 3 or header[0] != "FASTTREE" or header[1] != "v1"
            or not header[2].startswith("offsets=")):
        raise TreeFormatError(f"line 1: bad header {lines[0]!r}")
    try:
        n_offsets = int(header[2].split("=", 1)[1])
    except ValueError:
        raise TreeFormatError(f"line 1: bad offsets count in {lines[0]!r}") from None
    if n_offsets not in (16, 48):
        raise TreeFormatError(f"line 1: unsupported offsets={n_offsets}")

    pos = 1
    custom: list[tuple[int, int, int]] = []
    while pos < len(lines) and lines[pos].startswith("O "):
        parts = lines[pos].split()
        if len(parts) != 4:
            raise TreeFormatError(f"line {pos + 1}: bad offset row {lines[pos]!r}")
        try:
            custom.append((int(parts[1]), int(parts[2]), int(parts[3])))
        except ValueError:
            raise TreeFormatError(f"line {pos + 1}: non-integer offset row") from None
        pos += 1

    if n_offsets == 16:
        if custom:
            raise TreeFormatError("line 2: offset table rows not allowed for offsets=16")
        table = RING16
    elif custom:
        if [idx for idx, _, _ in custom] != list(range(48)):
            raise TreeFormatError("offset table must list indices 0..47 in order")
        try:
            table = OffsetTable("custom48", tuple((dx, dy) for _, dx, dy in custom), 0)
        except ValueError as exc:
            raise TreeFormatError(str(exc)) from None
    else:
        from .annealing import default_offsets_48
        table = default_offsets_48()

    def rec() -> TernaryTree:
        nonlocal pos
        if pos >= len(lines):
            raise TreeFormatError(f"line {len(lines) + 1}: unexpected end of tree")
        lineno, parts = pos + 1, lines[pos].split()
        pos += 1
        if not parts:
            raise TreeFormatError(f"line {lineno}: blank line inside tree")
        if parts[0] == "L":
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise TreeFormatError(f"line {lineno}: bad leaf {lines[lineno - 1]!r}")
            return LEAF0 if parts[1] == "0" else LEAF1
        if parts[0] == "N":
            if len(parts) != 2:
                raise TreeFormatError(f"line {lineno}: bad node {lines[lineno - 1]!r}")
            try:
                offset = int(parts[1])
            except ValueError:
                raise TreeFormatError(f"line {lineno}: non-integer offset index") from None
            try:
                table.xy(offset)
            except ValueError as exc:
                raise TreeFormatError(f"line {lineno}: {exc}") from None
            b = rec()
            s = rec()
            d = rec()
            return Node(offset, b, s, d)
        raise TreeFormatError(f"line {lineno}: unknown record {parts[0]!r}")

    tree = rec()
    for extra in range(pos, len(lines)):
        if lines[extra].strip():
            raise TreeFormatError(f"line {extra + 1}: trailing data after tree")
    return tree, table


class CompiledTree:
    """Flat-array form of a tree for vectorized application.

    Node k tests offset (dx[k], dy[k]); ``children[k, state]`` (state 0=d,
    1=s, 2=b) is the next node id, or ``-1 - cls`` for a leaf outcome.
    ``root`` is node 0, or ``-1 - cls`` when the whole tree is a leaf.
    """

    __slots__ = ("dx", "dy", "children", "root", "table", "n_nodes")

    def __init__(self, tree: TernaryTree, table: OffsetTable):
        validate_offsets(tree, table)
        dx: list[int] = []
        dy: list[int] = []
        children: list[list[int]] = []
        memo: dict[int, int] = {}  # shared subtrees keep one node id

        def add(t: TernaryTree) -> int:
            if isinstance(t, Leaf):
                return -1 - t.cls
            got = memo.get(id(t))
            if got is not None:
                return got
            nid = len(dx)
            memo[id(t)] = nid
            ox, oy = table.xy(t.offset)
            dx.append(ox)
            dy.append(oy)
            children.append([0, 0, 0])
            children[nid][2] = add(t.b)
            children[nid][1] = add(t.s)
            children[nid][0] = add(t.d)
            return nid

        self.root = add(tree)
        self.n_nodes = len(dx)
        self.dx = np.asarray(dx, dtype=np.int32)
        self.dy = np.asarray(dy, dtype=np.int32)
        self.children = np.asarray(children, dtype=np.int32).reshape(-1, 3)
        self.table = table

    @property
    def margin(self) -> int:
        return self.table.margin
