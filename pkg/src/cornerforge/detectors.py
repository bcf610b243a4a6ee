"""Uniform detector interface for evaluation and the CLI.

A detector produces a scored, suppressed keypoint list per image (cached per
frame) and controls the feature count through ``top_n_by_score``; detectors
with discrete scores return the closest achievable count instead of splitting
score ties.
"""

from __future__ import annotations

import numpy as np

from .annealing import (apply_sixteenfold, default_offsets_48,
                        sixteenfold_classify_positions)
from .baselines import (detect_random, detect_response, harris_response,
                        shi_tomasi_response, structure_tensor)
from .image import GrayImage
from .runtime import (Keypoint, compile_tree, nonmax_suppress,
                      scored_keypoints, suppress_scored_arrays, top_n_by_score)
from .segment import segment_score_field
from .trees import OffsetTable, RING16, TernaryTree


class FeatureDetector:
    """Base: cached scored keypoints + count-controlled detection."""

    name = "base"
    split_ties = False

    def __init__(self):
        self._cache: dict[int, tuple[GrayImage, list[Keypoint]]] = {}

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        raise NotImplementedError

    def clear_cache(self) -> None:
        self._cache.clear()

    def _cached(self, img: GrayImage) -> list[Keypoint]:
        entry = self._cache.get(id(img))
        if entry is not None and entry[0] is img:
            return entry[1]
        kps = self.scored_keypoints(img)
        self._cache[id(img)] = (img, kps)
        return kps

    def all_keypoints(self, img: GrayImage) -> list[Keypoint]:
        """Full scored, suppressed keypoint list (cached per frame)."""
        return self._cached(img)

    def detect(self, img: GrayImage, n_features: int,
               frame_key=None) -> list[Keypoint]:
        return top_n_by_score(self._cached(img), n_features,
                              split_ties=self.split_ties)


class FastRefDetector(FeatureDetector):
    """Reference segment test; scores are the exact maximum passing threshold."""

    def __init__(self, n: int = 9, t_min: int = 1):
        super().__init__()
        self.n = n
        self.t_min = t_min
        self.name = f"fast-ref-{n}"

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        field = segment_score_field(img, self.n)
        ys, xs = np.nonzero(field >= self.t_min)
        kxs, kys, ks = suppress_scored_arrays(xs, ys, field[ys, xs], field.shape)
        return [Keypoint(int(x), int(y), int(s)) for x, y, s in zip(kxs, kys, ks)]


class TreeDetector(FeatureDetector):
    """Learned single-tree detector; scores by bisection."""

    def __init__(self, tree: TernaryTree, table: OffsetTable = RING16,
                 t_min: int = 1, strips: int = 1):
        super().__init__()
        self.tree = tree
        self.table = table
        self.compiled = compile_tree(tree, table)
        self.t_min = t_min
        self.strips = strips
        self.name = "fast-tree"

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        return scored_keypoints(self.compiled, img, self.t_min, self.table,
                                strips=self.strips)


class SixteenFoldDetector(FeatureDetector):
    """Symmetrized wide-offset detector; scores by bisection on the OR."""

    def __init__(self, tree: TernaryTree, table: OffsetTable | None = None,
                 t_min: int = 1):
        super().__init__()
        self.tree = tree
        self.table = table or default_offsets_48()
        self.t_min = t_min
        self.name = "faster"

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        field = apply_sixteenfold(self.tree, img, self.t_min, self.table)
        ys, xs = np.nonzero(field)
        if not len(xs):
            return []
        lo = np.full(xs.shape, self.t_min, dtype=np.int16)
        hi = np.full(xs.shape, 255, dtype=np.int16)
        while True:
            active = np.flatnonzero(lo < hi)
            if not active.size:
                break
            mid = (lo[active] + hi[active] + 1) // 2
            res = sixteenfold_classify_positions(
                self.tree, img, xs[active], ys[active], mid, self.table)
            lo[active[res]] = mid[res]
            hi[active[~res]] = mid[~res] - 1
        kps = [Keypoint(int(x), int(y), int(s)) for x, y, s in zip(xs, ys, lo)]
        return nonmax_suppress(kps)


class HarrisDetector(FeatureDetector):
    split_ties = True

    def __init__(self, sigma: float = 2.5, k: float = 0.04, margin: int = 3):
        super().__init__()
        self.sigma = sigma
        self.k = k
        self.margin = margin
        self.name = "harris"

    def _response(self, img: GrayImage) -> np.ndarray:
        return harris_response(structure_tensor(img, self.sigma), self.k)

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        field = self._response(img)
        return detect_response(field, field.size, margin=self.margin)


class ShiTomasiDetector(HarrisDetector):
    def __init__(self, sigma: float = 2.5, margin: int = 3):
        super().__init__(sigma=sigma, margin=margin)
        self.name = "shi-tomasi"

    def _response(self, img: GrayImage) -> np.ndarray:
        return shi_tomasi_response(structure_tensor(img, self.sigma))


class RandomDetector(FeatureDetector):
    """Uniform scatter baseline; positions are independent of pixel content.

    Each frame key gets an independent derived seed so different frames of a
    sequence receive independent scatters.
    """

    def __init__(self, seed: int = 0, margin: int = 3):
        super().__init__()
        self.seed = seed
        self.margin = margin
        self.name = "random"

    def scored_keypoints(self, img: GrayImage) -> list[Keypoint]:
        raise NotImplementedError("random baseline has no response to score")

    def detect(self, img: GrayImage, n_features: int,
               frame_key=None) -> list[Keypoint]:
        derived = int(np.random.SeedSequence(
            (self.seed, 0 if frame_key is None else int(frame_key))
        ).generate_state(1)[0])
        return detect_random(img, n_features, derived, margin=self.margin)
