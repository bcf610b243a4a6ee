import math
import os
import shutil
import subprocess
import tempfile

import numpy as np
import pytest

from _oracles import brute_best_split, segment_label
from cornerforge import learn, segment as sg
from cornerforge.image import GrayImage, make_test_square
from cornerforge.trees import (Leaf, Node, RING16, merge_tree, tree_depth,
                               tree_size)


def random_training_set(rng, n_records=40, k=16, weighted=True):
    states = rng.integers(0, 3, (n_records, k)).astype(np.uint8)
    states = np.unique(states, axis=0)
    labels = rng.integers(0, 2, len(states)).astype(bool)
    weights = (rng.integers(1, 9, len(states)).astype(np.int64)
               if weighted else None)
    return learn.TrainingSet(states=np.asfortranarray(states), labels=labels,
                             weights=weights, offsets=RING16)


class TestEntropy:
    def test_pure_subset_zero(self):
        assert learn.entropy(5, 0) == 0.0
        assert learn.entropy(0, 3) == 0.0

    def test_one_one(self):
        assert learn.entropy(1, 1) == pytest.approx(2.0, abs=1e-12)

    def test_three_one(self):
        want = 8.0 - 3.0 * math.log2(3.0)
        assert learn.entropy(3, 1) == pytest.approx(want, abs=1e-12)
        assert learn.entropy(3, 1) == pytest.approx(3.2451, abs=1e-4)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            learn.entropy(-1, 2)


class TestBestSplit:
    def test_constructed_separator(self):
        # offset 7 (column 6) alone separates the labels
        rng = np.random.default_rng(0)
        states = rng.integers(0, 3, (60, 16)).astype(np.uint8)
        states = np.unique(states, axis=0)
        labels = states[:, 6] == 2
        ts = learn.TrainingSet(states=states, labels=labels, weights=None,
                               offsets=RING16)
        assert learn.best_split(ts) == 7

    def test_pure_subset_rejected(self):
        ts = random_training_set(np.random.default_rng(1))
        pure = learn.TrainingSet(states=ts.states,
                                 labels=np.zeros(ts.num_records, bool),
                                 weights=ts.weights, offsets=RING16)
        with pytest.raises(ValueError, match="pure"):
            learn.best_split(pure)

    def test_matches_brute_force_scan(self):
        # acceptance criterion at unit scale: 100 random sets, exact match
        rng = np.random.default_rng(2)
        for trial in range(100):
            ts = random_training_set(rng, n_records=int(rng.integers(5, 60)),
                                     weighted=bool(trial % 2))
            if not ts.labels.any() or ts.labels.all():
                continue
            rows = [tuple(int(v) for v in row) for row in ts.states]
            weights = (ts.weights if ts.weights is not None
                       else np.ones(len(rows), np.int64))
            want = brute_best_split(rows, list(ts.labels), list(weights))
            assert learn.best_split(ts) == want

    def test_gain_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            ts = random_training_set(rng)
            gains, _ = learn._split_gains(ts.states, ts.labels, ts.weights, None)
            assert (gains >= -1e-9).all()


class TestBuildTree:
    def test_single_record_is_leaf(self):
        ts = learn.TrainingSet(states=np.zeros((1, 16), np.uint8),
                               labels=np.array([True]), weights=None,
                               offsets=RING16)
        assert learn.build_tree(ts) == Leaf(1)

    def test_perfect_training_accuracy(self):
        rng = np.random.default_rng(4)
        for _ in range(15):
            ts = random_training_set(rng, n_records=80)
            tree = learn.build_tree(ts)
            got = learn.classify_states(tree, ts.states, 1)
            assert np.array_equal(got, ts.labels)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        ts = random_training_set(rng, n_records=120)
        assert learn.build_tree(ts) == learn.build_tree(ts)

    def test_merged_equals_unmerged(self):
        rng = np.random.default_rng(6)
        ts = random_training_set(rng, n_records=100)
        merged = learn.build_tree(ts, merge=True)
        plain = learn.build_tree(ts, merge=False)
        states = rng.integers(0, 3, (2000, 16)).astype(np.uint8)
        assert np.array_equal(learn.classify_states(merged, states, 1),
                              learn.classify_states(plain, states, 1))
        assert merged == plain  # merging only re-shares structure

    def test_conflicting_labels_raise(self):
        states = np.zeros((2, 16), np.uint8)
        ts = learn.TrainingSet(states=states,
                               labels=np.array([True, False]), weights=None,
                               offsets=RING16)
        with pytest.raises(learn.InconsistentLabelsError):
            learn.build_tree(ts)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            learn.build_tree(learn.empty_training_set())


class TestExtract:
    def test_constant_image_single_record(self):
        ts = learn.extract_training_data([GrayImage.constant(16, 16, 80)], 9, 20)
        assert ts.num_records == 1
        assert not ts.labels[0]
        assert (ts.states[0] == 1).all()  # all similar
        assert ts.weights[0] == 10 * 10 * 256  # every interior pixel, scaled

    def test_record_count_bounded(self):
        img = make_test_square(40, 16, 200, 40)
        ts = learn.extract_training_data([img], 9, 25)
        assert ts.num_records <= (40 - 6) ** 2

    def test_labels_replay_reference(self):
        rng = np.random.default_rng(7)
        img = GrayImage(rng.integers(0, 256, (30, 30)).astype(np.uint8))
        ts = learn.extract_training_data([img], 9, 30)
        for row, label in zip(ts.states[:200], ts.labels[:200]):
            assert segment_label([int(v) for v in row], 9) == bool(label)

    def test_no_images_rejected(self):
        with pytest.raises(ValueError):
            learn.extract_training_data([], 9, 20)


class TestAugment:
    def test_empty_gives_full_space(self):
        ts = learn.augment_exhaustive(learn.empty_training_set(), 9)
        assert ts.num_records == 43_046_721
        assert ts.weights is None  # unit weights
        assert int(ts.labels.sum()) == 46_658

    def test_labels_match_oracle_sample(self):
        ts = learn.augment_exhaustive(learn.empty_training_set(), 9)
        rng = np.random.default_rng(8)
        for code in rng.integers(0, sg.N_CONFIGS, 200):
            states = [int(v) for v in ts.states[code]]
            assert bool(ts.labels[code]) == segment_label(states, 9)

    def test_observed_weights_fold_in(self):
        img = make_test_square(24, 8, 220, 30)
        obs = learn.extract_training_data([img], 9, 30)
        ts = learn.augment_exhaustive(obs, 9, low_weight=1)
        codes = learn.codes_from_states(obs.states)
        for code, w in zip(codes, obs.weights):
            assert ts.weights[code] == w + 1
        untouched = (ts.weights == 1).sum()
        assert untouched == sg.N_CONFIGS - len(codes)

    def test_idempotent_labels_weights_grow(self):
        once = learn.augment_exhaustive(learn.empty_training_set(), 9, low_weight=1)
        twice = learn.augment_exhaustive(once, 9, low_weight=1)
        assert twice.num_records == once.num_records
        assert twice.labels is once.labels or np.array_equal(twice.labels, once.labels)
        assert (twice.weights == 2).all()

    def test_conflict_detected(self):
        img = make_test_square(24, 8, 220, 30)
        obs = learn.extract_training_data([img], 9, 30)
        bad = learn.TrainingSet(states=obs.states, labels=~obs.labels,
                                weights=obs.weights, offsets=RING16)
        with pytest.raises(learn.InconsistentLabelsError):
            learn.augment_exhaustive(bad, 9)

    def test_low_weight_validated(self):
        with pytest.raises(ValueError):
            learn.augment_exhaustive(learn.empty_training_set(), 9, low_weight=0)


class TestSharedSecondTest:
    def _image_ts(self):
        rng = np.random.default_rng(9)
        imgs = [GrayImage(rng.integers(0, 256, (36, 36)).astype(np.uint8))
                for _ in range(2)]
        imgs.append(make_test_square(40, 16, 240, 20))
        return learn.extract_training_data(imgs, 9, 30)

    def test_children_share_offset(self):
        ts = self._image_ts()
        tree = learn.build_tree(ts)
        forced = learn.force_shared_second_test(tree, ts)
        offsets = {c.offset for c in (forced.b, forced.s, forced.d)
                   if isinstance(c, Node)}
        assert len(offsets) == 1

    def test_classification_preserved_on_training_set(self):
        ts = self._image_ts()
        tree = learn.build_tree(ts)
        forced = learn.force_shared_second_test(tree, ts)
        assert np.array_equal(learn.classify_states(forced, ts.states, 1),
                              ts.labels)

    def test_already_shared_unchanged(self):
        sub = lambda off: Node(off, b=Leaf(1), s=Leaf(0), d=Leaf(0))
        tree = Node(1, b=sub(9), s=sub(9), d=sub(9))
        ts = self._image_ts()
        assert learn.force_shared_second_test(tree, ts) is tree

    def test_depth_precondition(self):
        ts = self._image_ts()
        with pytest.raises(ValueError):
            learn.force_shared_second_test(Leaf(0), ts)

    def test_first_two_tests_read_two_pixels(self):
        ts = self._image_ts()
        forced = learn.force_shared_second_test(learn.build_tree(ts), ts)
        seen = {forced.offset}
        seen |= {c.offset for c in (forced.b, forced.s, forced.d)
                 if isinstance(c, Node)}
        assert len(seen) == 2


class TestEmitSource:
    def test_leaf_returns_class(self):
        src = learn.emit_source(Leaf(0), RING16)
        assert "return 0;" in src
        assert "if" not in src

    def test_node_count_matches(self):
        rng = np.random.default_rng(10)
        ts = random_training_set(rng, n_records=60)
        tree = learn.build_tree(ts, merge=False)
        src = learn.emit_source(tree, RING16)
        assert src.count("else if") == tree_size(tree)
        assert src.count("return") == tree_size(tree) * 2 + 1

    def test_offsets_rendered_with_stride(self):
        tree = Node(1, b=Leaf(1), s=Leaf(0), d=Leaf(0))
        src = learn.emit_source(tree, RING16)
        assert "p[0 + -3 * stride]" in src

    def test_js_dialect(self):
        tree = Node(5, b=Leaf(1), s=Leaf(0), d=Leaf(0))
        src = learn.emit_source(tree, RING16, function_name="fk", dialect="js")
        assert src.startswith("function fk(p, base, stride, t)")

    def test_unknown_dialect(self):
        with pytest.raises(ValueError):
            learn.emit_source(Leaf(0), RING16, dialect="cobol")


@pytest.mark.skipif(not os.environ.get("CORNERFORGE_TEST_COMPILE"),
                    reason="compiling emitted source is opt-in "
                           "(set CORNERFORGE_TEST_COMPILE=1)")
class TestCompiledEmission:
    def test_compiled_matches_interpreter(self):
        import ctypes

        rng = np.random.default_rng(11)
        imgs = [GrayImage(rng.integers(0, 256, (40, 40)).astype(np.uint8))
                for _ in range(2)]
        ts = learn.extract_training_data(imgs, 9, 30)
        tree = learn.build_tree(ts)
        src = learn.emit_source(tree, RING16, function_name="classify")
        cc = shutil.which("cc") or shutil.which("gcc")
        assert cc, "no C compiler available"
        with tempfile.TemporaryDirectory() as tmp:
            c_path = os.path.join(tmp, "tree.c")
            so_path = os.path.join(tmp, "tree.so")
            with open(c_path, "w") as f:
                f.write(src.replace("static int classify", "int classify"))
            subprocess.run([cc, "-O2", "-shared", "-fPIC", c_path, "-o", so_path],
                           check=True)
            lib = ctypes.CDLL(so_path)
            lib.classify.restype = ctypes.c_int
            lib.classify.argtypes = [ctypes.POINTER(ctypes.c_ubyte),
                                     ctypes.c_int, ctypes.c_int]
            from cornerforge.runtime import classify_pixel

            img = imgs[0]
            flat = np.ascontiguousarray(img.pixels).ravel()
            buf = flat.ctypes.data_as(ctypes.POINTER(ctypes.c_ubyte))
            checked = 0
            for t in (10, 30, 60):
                for y in range(3, img.height - 3):
                    for x in range(3, img.width - 3):
                        ptr = ctypes.cast(
                            ctypes.addressof(buf.contents) + y * img.width + x,
                            ctypes.POINTER(ctypes.c_ubyte))
                        got = bool(lib.classify(ptr, img.width, t))
                        assert got == classify_pixel(tree, img, (x, y), t)
                        checked += 1
            assert checked > 3000
