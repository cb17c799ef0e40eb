import unittest
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

# Add the project root to the Python path
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import ConfigError, CorpusError, ImageFormatError, TokenIndexError
from m3t_lib.data_processing.batching import BatchPrefetcher, batch_iterator, make_batch
from m3t_lib.data_processing.corpus import (CorpusRecord, EncodedExample, PreparedExample, encode_examples,
                                            preprocess_records, read_corpus, summarize_corpus, write_corpus)
from m3t_lib.data_processing.image import (decode_netpbm, encode_netpbm, load_image, resize_bilinear,
                                           to_three_channels, write_netpbm)
from m3t_lib.data_processing.splits import SplitSpec, split_dataset
from m3t_lib.data_processing.synthetic import describe, generate_synthetic_corpus, write_synthetic_corpus
from m3t_lib.data_processing.text import keywords_to_sequence, normalize_text
from m3t_lib.data_processing.vocabulary import (BOS_ID, EOS_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
                                                Vocabulary, build_vocab)


class TestText(unittest.TestCase):

    def test_normalize_text(self):
        self.assertEqual(normalize_text("Age-related Macular Degeneration (AMD)"),
                         ["age", "related", "macular", "degeneration", "amd"])
        self.assertEqual(normalize_text("OD 20/40, o.k."), ["od", "o", "k"])
        self.assertEqual(normalize_text("  123 "), [])

    def test_normalize_text_is_idempotent(self):
        for s in ("Age-related Macular Degeneration (AMD)", "OD 20/40, o.k.", "  ", "Drusen;  RPE\tatrophy"):
            once = normalize_text(s)
            self.assertEqual(normalize_text(" ".join(once)), once)

    def test_keywords_to_sequence(self):
        self.assertEqual(keywords_to_sequence("Color Fundus, drusen,, 42, hard exudate"),
                         ["color", "fundus", "[SEP]", "drusen", "[SEP]", "hard", "exudate"])
        self.assertEqual(keywords_to_sequence(""), [])


class TestVocabulary(unittest.TestCase):

    def test_reserved_ids(self):
        self.assertEqual((PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID), (0, 1, 2, 3, 4))
        vocab = build_vocab([["a"]], cap=10, min_freq=1)
        self.assertEqual(vocab.tokens[:5], list(SPECIAL_TOKENS))
        self.assertEqual(vocab.token_id("[SEP]"), SEP_ID)

    def test_frequency_order_with_lexicographic_ties(self):
        vocab = build_vocab([["b", "a", "c", "c"], ["a", "b", "c", "d"]], cap=20, min_freq=2)
        self.assertEqual(vocab.tokens[5:], ["c", "a", "b"])
        self.assertEqual(vocab.frequencies["d"], 1)
        self.assertEqual(vocab.token_id("d"), UNK_ID)

    def test_cap_counts_reserved_tokens(self):
        vocab = build_vocab([list("abcdefgh") * 2], cap=8, min_freq=1)
        self.assertEqual(len(vocab), 8)
        self.assertEqual(vocab.tokens[5:], ["a", "b", "c"])
        with self.assertRaises(ConfigError):
            build_vocab([["a"]], cap=4)

    def test_random_corpus_matches_a_sort_and_group_count(self):
        rng = np.random.default_rng(8)
        words = [f"w{i}" for i in range(40)]
        corpus = [[words[j] for j in rng.integers(0, 40, size=rng.integers(1, 12))] for _ in range(100)]
        flat = sorted(t for tokens in corpus for t in tokens)
        groups = []
        start = 0
        for i in range(1, len(flat) + 1):
            if i == len(flat) or flat[i] != flat[start]:
                groups.append((flat[start], i - start))
                start = i
        ranked = [t for t, n in sorted(groups, key=lambda g: (-g[1], g[0])) if n >= 2]
        vocab = build_vocab(corpus, cap=30, min_freq=2)
        self.assertEqual(vocab.tokens, list(SPECIAL_TOKENS) + ranked[:25])
        self.assertEqual(vocab.frequencies, dict(groups))

    def test_special_tokens_are_not_counted(self):
        vocab = build_vocab([["[SEP]", "x", "[SEP]", "x"]], cap=10, min_freq=1)
        self.assertEqual(vocab.tokens.count("[SEP]"), 1)

    def test_encode_decode(self):
        vocab = build_vocab([["lung", "nodule", "lung", "nodule"]], cap=10, min_freq=1)
        ids = vocab.encode(["lung", "mass"])
        self.assertEqual(ids[1], UNK_ID)
        self.assertEqual(vocab.decode([BOS_ID] + ids + [EOS_ID, PAD_ID]), ["lung", "[UNK]"])
        with self.assertRaises(TokenIndexError):
            vocab.decode([len(vocab)])
        self.assertAlmostEqual(vocab.unk_rate([["lung", "mass"]]), 0.5)

    def test_dict_round_trip(self):
        vocab = build_vocab([["x", "y", "y"]], cap=10, min_freq=1)
        self.assertEqual(Vocabulary.from_dict(vocab.to_dict()).tokens, vocab.tokens)
        with self.assertRaises(ConfigError):
            Vocabulary(tokens=["a", "b"])


class TestSplits(unittest.TestCase):

    def test_reference_corpus_sizes(self):
        self.assertEqual(SplitSpec().sizes(15709), (9425, 3142, 3142))

    def test_small_corpus_sizes(self):
        self.assertEqual(SplitSpec().sizes(5), (3, 1, 1))
        self.assertEqual(SplitSpec().sizes(1), (1, 0, 0))

    def test_split_is_a_deterministic_partition(self):
        records = list(range(50))
        a = split_dataset(records, SplitSpec(seed=3))
        b = split_dataset(records, SplitSpec(seed=3))
        self.assertEqual(a, b)
        self.assertEqual(sorted(a[0] + a[1] + a[2]), records)
        self.assertNotEqual(split_dataset(records, SplitSpec(seed=4))[0], a[0])

    def test_invalid_fractions(self):
        with self.assertRaises(ConfigError):
            SplitSpec(train=0.5, val=0.2, test=0.2).validate()


class TestCorpus(unittest.TestCase):

    def test_write_then_read(self):
        with tempfile.TemporaryDirectory() as tmp:
            records = [CorpusRecord(str(Path(tmp) / "images" / "a.pgm"), "red free, drusen", "drusen seen"),
                       CorpusRecord(str(Path(tmp) / "feats" / "b.m3tf"), "", "normal fundus")]
            path = Path(tmp) / "corpus.tsv"
            write_corpus(records, path)
            self.assertTrue(path.read_text(encoding="utf-8").startswith("images/a.pgm\t"))
            loaded = read_corpus(path)
        self.assertEqual([r.image for r in loaded], [r.image for r in records])
        self.assertEqual(loaded[1].keywords, "")
        self.assertEqual([r.line for r in loaded], [1, 2])
        self.assertTrue(loaded[1].is_precomputed)

    def test_missing_field(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "corpus.tsv"
            path.write_text("a.pgm\tkw\tdesc\nb.pgm\tkw\n", encoding="utf-8")
            with self.assertRaises(CorpusError) as ctx:
                read_corpus(path)
        self.assertIn("line 2", str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_corpus("/nonexistent/corpus.tsv")

    def test_preprocess_drops_and_clips(self):
        records = [CorpusRecord("a", "k", "too short", 1),
                   CorpusRecord("b", "k, l", "one two three four five six", 2),
                   CorpusRecord("c", "", "one two three", 3)]
        examples, report = preprocess_records(records, min_len=3, max_len=4)
        self.assertEqual([e.image for e in examples], ["b", "c"])
        self.assertEqual(examples[0].description, ["one", "two", "three", "four"])
        self.assertEqual(examples[0].keywords, ["k", "[SEP]", "l"])
        self.assertEqual(len(report.dropped), 1)
        self.assertEqual(report.clipped[0][0], 2)
        self.assertTrue(report.lines()[0].startswith("dropped\tline 1"))

    def test_empty_keywords_encode_as_unknown(self):
        vocab = build_vocab([["one", "two"]], cap=10, min_freq=1)
        encoded = encode_examples([PreparedExample("a", [], ["one", "zzz"])], vocab)
        np.testing.assert_array_equal(encoded[0].keyword_ids, [UNK_ID])
        np.testing.assert_array_equal(encoded[0].description_ids, [vocab.token_id("one"), UNK_ID])

    def test_summary(self):
        records = [CorpusRecord("a", "red free, drusen", "x y z"), CorpusRecord("b", "red free", "x")]
        summary = summarize_corpus(records)
        self.assertEqual(summary.loc[0, "records"], 2)
        self.assertAlmostEqual(summary.loc[0, "mean_description_tokens"], 2.0)


class TestImages(unittest.TestCase):

    def test_netpbm_with_comment(self):
        blob = b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255])
        np.testing.assert_array_equal(decode_netpbm(blob), [[0, 255]])

    def test_netpbm_errors(self):
        with self.assertRaises(ImageFormatError):
            decode_netpbm(b"P2\n1 1\n255\n0")
        with self.assertRaises(ImageFormatError):
            decode_netpbm(b"P6\n2 2\n255\n" + bytes(5))
        with self.assertRaises(ImageFormatError):
            decode_netpbm(b"P5\n1 1\n65535\n" + bytes(2))

    def test_color_round_trip(self):
        pixels = np.random.default_rng(0).integers(0, 256, size=(3, 5, 3), dtype=np.uint8)
        np.testing.assert_array_equal(decode_netpbm(encode_netpbm(pixels)), pixels)

    def test_gray_image_is_replicated(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "g.pgm"
            write_netpbm(np.array([[0, 255], [255, 0]], dtype=np.uint8), path)
            image = load_image(path, 2)
        self.assertEqual(image.shape, (2, 2, 3))
        np.testing.assert_array_equal(image[:, :, 0], image[:, :, 2])
        self.assertEqual(image.max(), 1.0)

    def test_unsupported_suffix(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "x.bmp"
            path.write_bytes(b"BM")
            with self.assertRaises(ImageFormatError):
                load_image(path, 4)

    def test_resize_keeps_constant_images_constant(self):
        resized = resize_bilinear(np.full((5, 7, 3), 0.25), 9, 4)
        self.assertEqual(resized.shape, (9, 4, 3))
        np.testing.assert_allclose(resized, 0.25)

    def test_resize_interpolates(self):
        resized = resize_bilinear(np.array([[0.0, 1.0]]), 1, 4)
        np.testing.assert_allclose(resized, [[0.0, 0.25, 0.75, 1.0]])

    def test_channel_conversion(self):
        self.assertEqual(to_three_channels(np.zeros((2, 2, 4))).shape, (2, 2, 3))
        with self.assertRaises(ImageFormatError):
            to_three_channels(np.zeros((2, 2, 2)))


class TestSynthetic(unittest.TestCase):

    def test_deterministic(self):
        a = generate_synthetic_corpus(4, seed=9, image_size=16)
        b = generate_synthetic_corpus(4, seed=9, image_size=16)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.pixels, y.pixels)
            self.assertEqual(x.description, y.description)

    def test_description_names_modality_and_lesions(self):
        keywords, description = describe("red free", [("drusen", "upper left"), ("scar", "lower right")])
        self.assertEqual(keywords, "red free, drusen, scar")
        self.assertEqual(description,
                         "red free image showing drusen in the upper left quadrant "
                         "with scar in the lower right quadrant")

    def test_written_corpus_is_readable(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_synthetic_corpus(generate_synthetic_corpus(3, seed=1, image_size=8), tmp)
            records = read_corpus(path)
            image = load_image(records[0].image, 8)
        self.assertEqual(len(records), 3)
        self.assertEqual(image.shape, (8, 8, 3))


def _encoded(description, keywords=(5,)):
    return EncodedExample("x", np.array(keywords), np.array(description))


class TestBatching(unittest.TestCase):

    def test_teacher_forcing_layout(self):
        batch = make_batch([_encoded([7, 8, 9], keywords=(5, 6)), _encoded([7])])
        np.testing.assert_array_equal(batch.inputs, [[BOS_ID, 7, 8, 9], [BOS_ID, 7, PAD_ID, PAD_ID]])
        np.testing.assert_array_equal(batch.targets, [[7, 8, 9, EOS_ID], [7, EOS_ID, PAD_ID, PAD_ID]])
        np.testing.assert_array_equal(batch.target_mask.sum(axis=1), [4, 2])
        np.testing.assert_array_equal(batch.keywords(1), [5])

    def test_epoch_covers_every_example_once(self):
        split = [_encoded([i + 5]) for i in range(10)]
        batches = list(batch_iterator(split, 4, seed=1, epoch=0))
        self.assertEqual([len(b) for b in batches], [4, 4, 2])
        seen = sorted(int(b.inputs[i, 1]) for b in batches for i in range(len(b)))
        self.assertEqual(seen, list(range(5, 15)))

    def test_epochs_are_shuffled_differently(self):
        split = [_encoded([i + 5]) for i in range(20)]
        first = [int(x) for x in next(batch_iterator(split, 20, seed=1, epoch=0)).inputs[:, 1]]
        second = [int(x) for x in next(batch_iterator(split, 20, seed=1, epoch=1)).inputs[:, 1]]
        again = [int(x) for x in next(batch_iterator(split, 20, seed=1, epoch=0)).inputs[:, 1]]
        self.assertEqual(first, again)
        self.assertNotEqual(first, second)

    def test_empty_split(self):
        with self.assertRaises(CorpusError):
            next(batch_iterator([], 4))

    def test_prefetcher_preserves_order(self):
        split = [_encoded([i + 5]) for i in range(9)]
        expected = [b.inputs.tolist() for b in batch_iterator(split, 2, shuffle=False)]
        prefetcher = BatchPrefetcher(batch_iterator(split, 2, shuffle=False))
        try:
            got = [b.inputs.tolist() for b in prefetcher]
        finally:
            prefetcher.close()
        self.assertEqual(got, expected)

    def test_prefetcher_reraises_producer_errors(self):
        def failing():
            yield make_batch([_encoded([5])])
            raise CorpusError("image went missing")

        prefetcher = BatchPrefetcher(failing())
        try:
            with self.assertRaises(CorpusError):
                for _ in prefetcher:
                    time.sleep(0.01)
        finally:
            prefetcher.close()


if __name__ == '__main__':
    unittest.main()
