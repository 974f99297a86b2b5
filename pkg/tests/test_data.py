"""Synthetic corpus tests: determinism, splits, batching, container format."""

import numpy as np
import pytest

from crossdoc import data
from crossdoc.encoders import NUM_RESERVED_IDS, SEP_ID
from crossdoc.errors import ConfigError, FormatError


def tiny_spec(**kw):
    defaults = dict(classes=3, samples_per_class=20, height=8, width=8,
                    patch=4, vocab_size=32, seed=7)
    defaults.update(kw)
    return data.SyntheticCorpusSpec(**defaults)


class TestSpec:
    def test_vocab_too_small_for_blocks(self):
        with pytest.raises(ConfigError):
            tiny_spec(classes=30, vocab_size=32)

    def test_noise_bounds(self):
        with pytest.raises(ConfigError):
            tiny_spec(pixel_noise=1.5)
        with pytest.raises(ConfigError):
            tiny_spec(token_corruption=-0.1)

    def test_token_blocks_disjoint(self):
        spec = tiny_spec()
        ranges = [spec.class_token_range(k) for k in range(spec.classes)]
        for i, (lo_i, hi_i) in enumerate(ranges):
            assert lo_i >= NUM_RESERVED_IDS
            assert hi_i <= spec.vocab_size
            for lo_j, _ in ranges[i + 1:]:
                assert hi_i <= lo_j

    def test_templates_pairwise_distinct(self):
        t = tiny_spec().class_templates()
        flat = t.reshape(t.shape[0], -1)
        for i in range(len(flat)):
            for j in range(i + 1, len(flat)):
                assert np.max(np.abs(flat[i] - flat[j])) > 1e-6


class TestGenerate:
    def test_split_sizes_and_balance(self):
        """4 classes x 100 samples split 80/10/10 per class."""
        splits = data.generate_corpus(data.SyntheticCorpusSpec())
        assert (len(splits.train), len(splits.val), len(splits.test)) == (320, 40, 40)
        for part in (splits.train, splits.val, splits.test):
            labels = [r.label for r in part]
            counts = np.bincount(labels, minlength=4)
            assert np.all(counts == counts[0])

    def test_splits_disjoint_and_exhaustive(self):
        spec = tiny_spec()
        splits = data.generate_corpus(spec)
        total = splits.all_records()
        assert len(total) == spec.classes * spec.samples_per_class
        fingerprints = {
            (r.image.pixels.tobytes(), r.tokens.ids.tobytes(), r.label) for r in total
        }
        assert len(fingerprints) == len(total)

    def test_noiseless_spec_is_degenerate(self):
        """Zero noise: same-class images identical, tokens all from the block."""
        spec = tiny_spec(pixel_noise=0.0, token_corruption=0.0)
        splits = data.generate_corpus(spec)
        by_class = {}
        for r in splits.all_records():
            by_class.setdefault(r.label, []).append(r)
        for label, records in by_class.items():
            first = records[0].image.pixels
            for r in records[1:]:
                np.testing.assert_array_equal(r.image.pixels, first)
            lo, hi = spec.class_token_range(label)
            for r in records:
                content = r.tokens.ids[1:][r.tokens.ids[1:] >= NUM_RESERVED_IDS]
                assert np.all((content >= lo) & (content < hi))

    def test_deterministic_given_seed(self, tmp_path):
        spec = tiny_spec()
        a, b = data.generate_corpus(spec), data.generate_corpus(spec)
        pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
        data.write_corpus(pa, spec, a)
        data.write_corpus(pb, spec, b)
        assert pa.read_bytes() == pb.read_bytes()

    def test_token_sequences_well_formed(self):
        for r in data.generate_corpus(tiny_spec()).all_records():
            ids = r.tokens.ids
            assert len(ids) == 5  # 8x8 / 4x4 patches + CLS
            real = np.flatnonzero(ids != 0)
            assert ids[real[-1]] == SEP_ID

    def test_modality_signals_beat_chance(self):
        """Nearest-template and token-histogram classifiers clear 1/K easily."""
        spec = data.SyntheticCorpusSpec()
        splits = data.generate_corpus(spec)
        full = np.kron(spec.class_templates(), np.ones((spec.patch, spec.patch, 1)))
        img_hits = tok_hits = 0
        for r in splits.test:
            dist = ((full - r.image.pixels[None].astype(float)) ** 2).sum(axis=(1, 2, 3))
            img_hits += int(np.argmin(dist) == r.label)
            content = r.tokens.ids[r.tokens.ids >= NUM_RESERVED_IDS]
            scores = [
                int(((content >= lo) & (content < hi)).sum())
                for lo, hi in (spec.class_token_range(k) for k in range(spec.classes))
            ]
            tok_hits += int(np.argmax(scores) == r.label)
        n = len(splits.test)
        assert img_hits / n > 1.0 / spec.classes
        assert tok_hits / n > 1.0 / spec.classes


class TestMakeBatch:
    def test_balanced_case(self):
        """Batch of 8 over 4 classes: exactly two records per class."""
        splits = data.generate_corpus(data.SyntheticCorpusSpec(samples_per_class=10))
        batch = data.make_batch(splits.train, 8, np.random.default_rng(0))
        counts = np.bincount([r.label for r in batch], minlength=4)
        assert sorted(counts.tolist()) == [2, 2, 2, 2]

    def test_every_anchor_has_a_positive(self):
        splits = data.generate_corpus(tiny_spec())
        for seed in range(5):
            batch = data.make_batch(splits.train, 10, np.random.default_rng(seed))
            labels = np.array([r.label for r in batch])
            assert len(batch) == 10
            for y in labels:
                assert (labels == y).sum() >= 2

    def test_reproducible_under_fixed_seed(self):
        splits = data.generate_corpus(tiny_spec())
        a = data.make_batch(splits.train, 8, np.random.default_rng(3))
        b = data.make_batch(splits.train, 8, np.random.default_rng(3))
        assert [r.label for r in a] == [r.label for r in b]
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.tokens.ids, rb.tokens.ids)

    def test_size_validation(self):
        splits = data.generate_corpus(tiny_spec())
        with pytest.raises(ConfigError):
            data.make_batch(splits.train, 2, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            data.make_batch(splits.train, 7, np.random.default_rng(0))

    def test_collate_shapes(self):
        spec = tiny_spec()
        splits = data.generate_corpus(spec)
        batch = data.make_batch(splits.train, 6, np.random.default_rng(1))
        images, ids, labels = data.collate(batch)
        assert images.shape == (6, 8, 8, 1) and images.dtype == np.float32
        assert ids.shape == (6, spec.n_max)
        assert labels.shape == (6,)


class TestContainer:
    def test_round_trip_identity(self, tmp_path):
        spec = tiny_spec()
        splits = data.generate_corpus(spec)
        path = tmp_path / "corpus.bin"
        data.write_corpus(path, spec, splits)
        spec2, splits2 = data.read_corpus(path)
        assert spec2 == spec
        for part, part2 in zip((splits.train, splits.val, splits.test),
                               (splits2.train, splits2.val, splits2.test)):
            assert len(part) == len(part2)
            for a, b in zip(part, part2):
                np.testing.assert_array_equal(a.image.pixels, b.image.pixels)
                np.testing.assert_array_equal(a.tokens.ids, b.tokens.ids)
                assert a.label == b.label

    def test_write_read_write_is_stable(self, tmp_path):
        spec = tiny_spec()
        splits = data.generate_corpus(spec)
        p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
        data.write_corpus(p1, spec, splits)
        data.write_corpus(p2, *data.read_corpus(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "corpus.bin"
        data.write_corpus(path, spec, data.generate_corpus(spec))
        raw = bytearray(path.read_bytes())
        raw[0] = ord("Y")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            data.read_corpus(path)

    def test_unsupported_version_rejected(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "corpus.bin"
        data.write_corpus(path, spec, data.generate_corpus(spec))
        raw = bytearray(path.read_bytes())
        raw[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            data.read_corpus(path)

    def test_truncation_reports_byte_offset(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "corpus.bin"
        data.write_corpus(path, spec, data.generate_corpus(spec))
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(FormatError, match=r"byte \d+"):
            data.read_corpus(path)
