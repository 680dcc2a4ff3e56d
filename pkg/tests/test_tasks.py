import gzip
import struct

import numpy as np
import pytest

from rnnsvd.tasks import (
    IngestionError,
    build_vocab,
    gen_memorization,
    gen_memorization_batch,
    lm_batches,
    load_idx_images,
    load_idx_labels,
    load_mnist,
    scanline_sequence,
    synthetic_corpus,
    tokenize,
)


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_spec_sentence():
    assert tokenize("To be, or not to be") == ["to", "be", ",", "or", "not", "to", "be"]


def test_tokenize_contractions_and_digits():
    assert tokenize("Don't stop in 1603!") == ["don", "'t", "stop", "in", "1603", "!"]


def test_tokenize_fixpoint():
    texts = [
        "To be, or not to be: that is the question.",
        "Don't -- I say, don't! 'tis 42nd.",
        "a''b c'd 'lone",
        synthetic_corpus(300, seed=5),
    ]
    for text in texts:
        toks = tokenize(text)
        assert tokenize(" ".join(toks)) == toks


def test_tokenize_rejects_bad_bytes():
    with pytest.raises(IngestionError) as err:
        tokenize(b"abc\xff\xfe")
    assert err.value.offset == 3


def test_build_vocab_single_token():
    v = build_vocab(["word"])
    assert len(v) == 3  # <unk>, <eot>, word
    assert v.encode(["word", "other"]).tolist() == [2, v.unk_index]


def test_build_vocab_max_size_and_ties():
    v = build_vocab("a a b b b c".split(), max_size=2)
    assert v.index_to_token[2:] == ["b", "a"]
    assert v.encode(["c"]).tolist() == [v.unk_index]


def test_build_vocab_tie_break_lexicographic():
    v = build_vocab("z y z y x".split())
    # z and y both occur twice: y sorts first
    assert v.index_to_token[2:] == ["y", "z", "x"]


def test_lm_batches_single_stream_full_window():
    ids = np.arange(11)
    stream = lm_batches(ids, batch=1, window=10)
    pairs = list(stream)
    assert len(pairs) == 1
    inp, tgt = pairs[0]
    assert inp[:, 0].tolist() == list(range(10))
    assert tgt[:, 0].tolist() == list(range(1, 11))


def test_lm_batches_targets_shift_by_one():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 50, size=200)
    for inp, tgt in lm_batches(ids, batch=4, window=7):
        assert np.array_equal(tgt[:-1], inp[1:])


def test_lm_batches_hand_sliced():
    ids = np.arange(10)
    stream = lm_batches(ids, batch=2, window=2)
    assert stream.streams.tolist() == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    pairs = list(stream)
    assert len(pairs) == 2
    assert pairs[0][0].T.tolist() == [[0, 1], [5, 6]]
    assert pairs[0][1].T.tolist() == [[1, 2], [6, 7]]
    assert pairs[1][0].T.tolist() == [[2, 3], [7, 8]]
    assert pairs[1][1].T.tolist() == [[3, 4], [8, 9]]


def test_lm_batches_covers_corpus_once():
    ids = np.arange(242)
    stream = lm_batches(ids, batch=4, window=6)
    seen = []
    for inp, _ in stream:
        seen += inp.T.reshape(-1).tolist()
    # every stream token except the last window-remainder appears once as input
    per_stream = stream.n_windows * stream.window
    expected = []
    for b in range(4):
        expected += stream.streams[b, :per_stream].tolist()
    assert sorted(seen) == sorted(expected)
    assert len(set(seen)) == len(seen)


def test_lm_batches_too_short():
    with pytest.raises(ValueError):
        lm_batches(np.arange(5), batch=2, window=3)


def make_idx_fixture(tmp_path, images, labels, gz=False):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, r, c = images.shape
    img_bytes = struct.pack(">IIII", 0x803, n, r, c) + images.tobytes()
    lab_bytes = struct.pack(">II", 0x801, n) + labels.tobytes()
    ip, lp = tmp_path / "imgs-idx3-ubyte", tmp_path / "labs-idx1-ubyte"
    if gz:
        ip, lp = tmp_path / "imgs.gz", tmp_path / "labs.gz"
        ip.write_bytes(gzip.compress(img_bytes))
        lp.write_bytes(gzip.compress(lab_bytes))
    else:
        ip.write_bytes(img_bytes)
        lp.write_bytes(lab_bytes)
    return ip, lp


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(2, 4, 4)).astype(np.uint8)
    labels = np.array([3, 7], dtype=np.uint8)
    ip, lp = make_idx_fixture(tmp_path, images, labels)
    got = load_idx_images(ip)
    assert got.shape == (2, 4, 4)
    assert np.array_equal((got * 255).round().astype(np.uint8), images)
    assert load_idx_labels(lp).tolist() == [3, 7]


def test_idx_gzip_round_trip(tmp_path):
    images = np.zeros((1, 2, 2), dtype=np.uint8)
    ip, lp = make_idx_fixture(tmp_path, images, np.array([1], dtype=np.uint8), gz=True)
    assert load_idx_images(ip).shape == (1, 2, 2)
    assert load_idx_labels(lp).tolist() == [1]


def test_idx_truncated_is_error_not_crash(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    ip, _ = make_idx_fixture(tmp_path, images, np.array([0, 1], dtype=np.uint8))
    data = ip.read_bytes()[:-5]
    bad = tmp_path / "trunc-idx3-ubyte"
    bad.write_bytes(data)
    with pytest.raises(IngestionError) as err:
        load_idx_images(bad)
    assert "trunc" in str(err.value)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad-idx3-ubyte"
    p.write_bytes(struct.pack(">IIII", 0xDEAD, 0, 0, 0))
    with pytest.raises(IngestionError):
        load_idx_images(p)
    with pytest.raises(IngestionError):
        load_idx_labels(p)


def test_load_mnist_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_mnist(tmp_path)


def test_scanline_rows_top_to_bottom():
    img = np.zeros((28, 28))
    img[5, 11] = 0.7
    seq = scanline_sequence(img)
    assert seq.shape == (28, 28)
    nz = np.nonzero(seq)
    assert nz[0].tolist() == [5] and nz[1].tolist() == [11]
    assert np.array_equal(np.stack([seq[t] for t in range(28)]), img)
    with pytest.raises(ValueError):
        scanline_sequence(np.zeros((28, 27)))
    with pytest.raises(ValueError):
        scanline_sequence(np.zeros(28))


def test_scanline_matches_hand_slices():
    rng = np.random.default_rng(2)
    img = rng.random(size=(8, 8))
    seq = scanline_sequence(img)
    for t in range(8):
        assert np.array_equal(seq[t], img[t, :])


def test_memorization_layout():
    rng = np.random.default_rng(3)
    s = gen_memorization(3, 4, rng)
    assert s.inputs.shape == (3 + 4 + 3, 2)
    assert s.mask.sum() == 3
    assert np.all(s.mask[-3:] == 1)
    # stop channel fires exactly once, at the first recall step
    assert s.inputs[:, 1].sum() == 1
    assert s.inputs[3 + 4, 1] == 1
    # silence means zero input on the value channel
    assert np.all(s.inputs[3:, 0] == 0)
    assert np.array_equal(s.targets[-3:, 0], s.bits)


def test_memorization_t_zero_recall_is_immediate():
    rng = np.random.default_rng(4)
    s = gen_memorization(3, 0, rng)
    assert s.inputs.shape == (6, 2)
    assert s.inputs[3, 1] == 1  # stop right after presentation
    assert np.all(s.mask[3:] == 1)


def test_memorization_batch_shares_delay_and_is_fair():
    rng = np.random.default_rng(5)
    batch = gen_memorization_batch(8, 5, 4096, rng)
    assert batch.inputs.shape == (21, 4096, 2)
    assert batch.targets.shape == (21, 4096, 1)
    assert np.all(batch.mask.sum(axis=0) == 8)
    mean_bit = batch.targets[13:, :, 0].mean()
    assert 0.47 <= mean_bit <= 0.53


def test_memorization_bit_mean_concentrates():
    rng = np.random.default_rng(6)
    bits = gen_memorization_batch(1, 0, 100_000, rng).targets[-1, :, 0]
    assert 0.497 <= bits.mean() <= 0.503


def test_memorization_validation():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        gen_memorization(0, 1, rng)
    with pytest.raises(ValueError):
        gen_memorization(2, -1, rng)


def test_synthetic_corpus_deterministic_and_tokenizable():
    a = synthetic_corpus(2000, seed=9)
    b = synthetic_corpus(2000, seed=9)
    assert a == b
    toks = tokenize(a)
    assert len(toks) >= 1500
    v = build_vocab(toks)
    assert len(v) > 100
    assert tokenize(" ".join(toks)) == toks
