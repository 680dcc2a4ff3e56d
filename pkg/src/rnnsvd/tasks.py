"""Data ingestion and task generation for the three experiments.

Tokenizer ruleset (fixed, self-contained; vocabulary sizes will differ
from external tokenizers):
  1. lowercase the text
  2. tokens are runs of letters/digits, an apostrophe followed by letters
     (so contractions split as "don" + "'t"), or a single other
     non-space character (punctuation stands alone)
Joining tokens with single spaces and re-tokenizing is a fixpoint.
"""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .network import Batch

UNKNOWN = "<unk>"
END_OF_TEXT = "<eot>"

_TOKEN_RE = re.compile(r"[a-z0-9]+|'[a-z]+|[^\sa-z0-9]")


class IngestionError(ValueError):
    """Bad input data; carries the offending file and byte offset when known."""

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.offset = offset


def tokenize(text: str) -> list[str]:
    if not isinstance(text, str):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise IngestionError(f"invalid UTF-8: {e.reason}", offset=e.start) from e
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    """Frequency-ranked vocabulary with dense indices; specials first."""

    index_to_token: list[str]
    token_to_index: dict[str, int] = field(repr=False)
    unk_index: int = 0
    eot_index: int = 1

    def __len__(self) -> int:
        return len(self.index_to_token)

    def encode(self, tokens: list[str]) -> np.ndarray:
        unk = self.unk_index
        t2i = self.token_to_index
        return np.array([t2i.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.index_to_token[int(i)] for i in ids]


def build_vocab(tokens: list[str], max_size: Optional[int] = None) -> Vocab:
    """Rank by frequency, ties broken lexicographically; tokens beyond
    max_size map to the unknown token."""
    if not tokens:
        raise ValueError("cannot build a vocabulary from no tokens")
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    index_to_token = [UNKNOWN, END_OF_TEXT] + ranked
    return Vocab(index_to_token=index_to_token,
                 token_to_index={t: i for i, t in enumerate(index_to_token)})


@dataclass
class LmBatchStream:
    """Corpus ids split into `batch` contiguous streams, walked in
    gap-free, non-overlapping windows; targets are inputs shifted by one.

    Hidden state is meant to be carried across consecutive windows of the
    same stream, so one pass is one continuous, ordered read of the corpus.
    """

    streams: np.ndarray   # (batch, stream_len)
    window: int

    @property
    def batch(self) -> int:
        return self.streams.shape[0]

    @property
    def n_windows(self) -> int:
        return (self.streams.shape[1] - 1) // self.window

    def __len__(self) -> int:
        return self.n_windows

    def __iter__(self):
        w = self.window
        for k in range(self.n_windows):
            inputs = self.streams[:, k * w:(k + 1) * w].T
            targets = self.streams[:, k * w + 1:(k + 1) * w + 1].T
            yield np.ascontiguousarray(inputs), np.ascontiguousarray(targets)


def lm_batches(ids, batch: int, window: int) -> LmBatchStream:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size < batch * (window + 1):
        raise ValueError(
            f"corpus of {ids.size} tokens is too short for batch={batch}, window={window}")
    stream_len = ids.size // batch
    streams = ids[:batch * stream_len].reshape(batch, stream_len)
    return LmBatchStream(streams=streams, window=window)


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def _read_idx_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx_images(path) -> np.ndarray:
    """IDX image file -> (N, rows, cols) float64 scaled to [0, 1]."""
    raw = _read_idx_bytes(path)
    if len(raw) < 16:
        raise IngestionError("truncated IDX image header", str(path), len(raw))
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise IngestionError(f"bad image magic 0x{magic:08x}", str(path), 0)
    need = 16 + count * rows * cols
    if len(raw) != need:
        raise IngestionError(f"expected {need} bytes, found {len(raw)}", str(path),
                             min(len(raw), need))
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    raw = _read_idx_bytes(path)
    if len(raw) < 8:
        raise IngestionError("truncated IDX label header", str(path), len(raw))
    magic, count = struct.unpack(">II", raw[:8])
    if magic != _IDX_LABEL_MAGIC:
        raise IngestionError(f"bad label magic 0x{magic:08x}", str(path), 0)
    if len(raw) != 8 + count:
        raise IngestionError(f"expected {8 + count} bytes, found {len(raw)}", str(path),
                             min(len(raw), 8 + count))
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise IngestionError("labels outside 0-9", str(path), 8)
    return labels


@dataclass
class MnistDataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


_CANONICAL_NAMES = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
)


def load_mnist(directory) -> MnistDataset:
    """Load the four canonical IDX files (optionally .gz) from a directory."""
    d = Path(directory)
    names = _CANONICAL_NAMES[0]
    paths = []
    for n in names:
        p = d / n
        if not p.exists() and (d / (n + ".gz")).exists():
            p = d / (n + ".gz")
        if not p.exists():
            raise IngestionError(f"missing {n}", str(d))
        paths.append(p)
    ds = MnistDataset(
        train_images=load_idx_images(paths[0]),
        train_labels=load_idx_labels(paths[1]),
        test_images=load_idx_images(paths[2]),
        test_labels=load_idx_labels(paths[3]),
    )
    for imgs, labs, name in ((ds.train_images, ds.train_labels, names[0]),
                             (ds.test_images, ds.test_labels, names[2])):
        if imgs.shape[0] != labs.shape[0]:
            raise IngestionError("image/label count mismatch", name)
    return ds


def scanline_sequence(image) -> np.ndarray:
    """Emit a square image one row at a time, top to bottom: (L, L) -> (L, L)
    where axis 0 is the time step."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square 2-D image, got shape {img.shape}")
    return img.copy()


def scanline_batches(images, labels, batch_size: int, rng: Optional[np.random.Generator] = None):
    """Yield mean-pool classifier batches (inputs (L, B, L), targets (B,)).

    Shuffles once per call when an rng is given.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = images.shape[0]
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        sel = order[start:start + batch_size]
        xs = images[sel].transpose(1, 0, 2)  # rows become time steps
        yield Batch(inputs=np.ascontiguousarray(xs), targets=labels[sel])


@dataclass
class MemorizationSample:
    """One bit-recall trial: present n bits, stay silent for t steps, raise
    the stop channel, then score only the n recall steps."""

    bits: np.ndarray      # (n_bits,) in {0, 1}
    delay: int
    inputs: np.ndarray    # (n_bits + t + n_bits, 2): channel 0 value, channel 1 stop
    targets: np.ndarray   # (L, 1)
    mask: np.ndarray      # (L,), 1 on recall steps


def gen_memorization(n_bits: int, t: int, rng: np.random.Generator) -> MemorizationSample:
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    if t < 0:
        raise ValueError("delay must be >= 0")
    batch = gen_memorization_batch(n_bits, t, 1, rng)
    return MemorizationSample(
        bits=np.ascontiguousarray(batch.targets[n_bits + t:, 0, 0]),
        delay=t,
        inputs=batch.inputs[:, 0, :],
        targets=batch.targets[:, 0, :],
        mask=batch.mask[:, 0],
    )


def gen_memorization_batch(n_bits: int, t: int, batch_size: int,
                           rng: np.random.Generator) -> Batch:
    """Batched bit-recall samples sharing one delay t.

    Layout over L = n_bits + t + n_bits steps: bits ride channel 0 during
    the first n_bits steps; the stop channel fires for exactly one step at
    index n_bits + t (the first recall step); targets carry the bits on
    the final n_bits steps and the mask is zero everywhere else.
    """
    if n_bits < 1 or t < 0 or batch_size < 1:
        raise ValueError("need n_bits >= 1, t >= 0, batch_size >= 1")
    length = n_bits + t + n_bits
    bits = (rng.random(size=(batch_size, n_bits)) < 0.5).astype(np.float64)
    inputs = np.zeros((length, batch_size, 2))
    inputs[:n_bits, :, 0] = bits.T
    inputs[n_bits + t, :, 1] = 1.0
    targets = np.zeros((length, batch_size, 1))
    targets[n_bits + t:, :, 0] = bits.T
    mask = np.zeros((length, batch_size))
    mask[n_bits + t:, :] = 1.0
    return Batch(inputs=inputs, targets=targets, mask=mask)


# ---------------------------------------------------------------------------
# Fallback corpus: deterministic pseudo-English prose for running the
# language-model pipeline when no real plain-text corpus is supplied.
# Zipf-ranked lexicon plus phrase templates give it learnable local
# structure; it is a stand-in, not natural language.

_ONSETS = ["b", "br", "c", "ch", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "j",
           "k", "l", "m", "n", "p", "pr", "qu", "r", "s", "sh", "sl", "st", "t",
           "th", "tr", "v", "w"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ou"]
_CODAS = ["", "n", "r", "s", "t", "l", "st", "nd", "ck"]

_DETERMINERS = ["the", "the", "the", "a", "a", "his", "her", "their", "this", "that"]
_PREPOSITIONS = ["of", "in", "to", "with", "from", "upon", "under", "against"]
_CONJUNCTIONS = ["and", "but", "or", "for", "yet"]
_PRONOUNS = ["he", "she", "they", "we", "it", "i", "you"]
_AUXILIARIES = ["is", "was", "will be", "has been", "must be", "may be"]


def _make_words(rng: np.random.Generator, count: int, min_syl: int, max_syl: int) -> list[str]:
    words = set()
    while len(words) < count:
        n = int(rng.integers(min_syl, max_syl + 1))
        w = "".join(
            _ONSETS[int(rng.integers(len(_ONSETS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            + (_CODAS[int(rng.integers(len(_CODAS)))] if k == n - 1 else "")
            for k in range(n)
        )
        words.add(w)
    return sorted(words)


def _zipf_pick(rng: np.random.Generator, words: list[str]) -> str:
    # rank-frequency ~ 1/(rank+2); inverse-CDF sampling over a cached grid
    n = len(words)
    weights = 1.0 / (np.arange(n) + 2.0)
    cdf = np.cumsum(weights / weights.sum())
    return words[int(np.searchsorted(cdf, rng.random()))]


def synthetic_corpus(n_words: int, seed: int = 0) -> str:
    """Deterministic pseudo-English text of roughly n_words tokens."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    nouns = _make_words(rng, 2400, 1, 3)
    verbs = _make_words(rng, 1200, 1, 2)
    adjectives = _make_words(rng, 800, 1, 3)
    adverbs = _make_words(rng, 300, 2, 3)

    def noun():
        return _zipf_pick(rng, nouns)

    def verb():
        return _zipf_pick(rng, verbs) + ("s" if rng.random() < 0.5 else "ed")

    def adjective():
        return _zipf_pick(rng, adjectives)

    def np_():
        out = [_DETERMINERS[int(rng.integers(len(_DETERMINERS)))]]
        if rng.random() < 0.4:
            out.append(adjective())
        out.append(noun())
        if rng.random() < 0.25:
            out += [_PREPOSITIONS[int(rng.integers(len(_PREPOSITIONS)))], noun()]
        return out

    def clause():
        subj = np_() if rng.random() < 0.7 else [_PRONOUNS[int(rng.integers(len(_PRONOUNS)))]]
        pred = [verb()] if rng.random() < 0.8 else _AUXILIARIES[int(rng.integers(len(_AUXILIARIES)))].split() + [adjective()]
        out = subj + pred
        if rng.random() < 0.6:
            out += np_()
        if rng.random() < 0.2:
            out.append(_zipf_pick(rng, adverbs))
        return out

    words: list[str] = []
    while len(words) < n_words:
        sent = clause()
        while rng.random() < 0.35:
            sent.append(_CONJUNCTIONS[int(rng.integers(len(_CONJUNCTIONS)))])
            sent += clause()
        words += sent
        words.append("." if rng.random() < 0.8 else ";")
        if rng.random() < 0.08:
            words.append("\n")
    text = " ".join(words[:n_words]).replace(" \n ", "\n")
    return text
