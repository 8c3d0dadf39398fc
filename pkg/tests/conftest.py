"""Shared fixtures: on-disk digit and sentiment corpora.

The digit corpus prefers a real 28x28 handwritten-digit dataset in IDX
format when ``SLIMLSTM_MNIST_DIR`` points at one (files named
``train-images-idx3-ubyte``, ``train-labels-idx1-ubyte``,
``t10k-images-idx3-ubyte``, ``t10k-labels-idx1-ubyte``).  Otherwise a
deterministic surrogate is synthesized from scikit-learn's 8x8 digits:
3x upscaling into a 28x28 canvas with random placement jitter and mild
noise, with train and test drawn from disjoint base images.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from slimlstm.data import write_idx

MNIST_ENV = "SLIMLSTM_MNIST_DIR"
MNIST_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def make_digit_corpus(n_train: int, n_test: int, seed: int = 1234):
    """Synthesize a 28x28 uint8 digit corpus from sklearn's 8x8 digits."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(digits.images))
    split = int(0.8 * len(order))
    bases = {
        "train": (digits.images[order[:split]], digits.target[order[:split]]),
        "test": (digits.images[order[split:]], digits.target[order[split:]]),
    }

    def synth(which, count):
        imgs, labels = bases[which]
        big = np.kron(imgs, np.ones((3, 3))) * (255.0 / 16.0)  # (k, 24, 24)
        idx = rng.integers(0, len(imgs), count)
        out = np.zeros((count, 28, 28))
        for i, b in enumerate(idx):
            dy, dx = rng.integers(0, 5, 2)  # jitter within the 4px margin
            out[i, dy:dy + 24, dx:dx + 24] = big[b]
        out += rng.uniform(0.0, 20.0, out.shape)
        return np.clip(out, 0, 255).astype(np.uint8), labels[idx].astype(np.uint8)

    xtr, ytr = synth("train", n_train)
    xte, yte = synth("test", n_test)
    return xtr, ytr, xte, yte


@pytest.fixture(scope="session")
def digit_idx_dir(tmp_path_factory) -> Path:
    """Directory holding the four IDX files for the full benchmark corpus
    (10000 train / 2000 test samples)."""
    real = os.environ.get(MNIST_ENV)
    if real and all((Path(real) / name).exists() for name in MNIST_NAMES.values()):
        return Path(real)
    out = tmp_path_factory.mktemp("digits")
    xtr, ytr, xte, yte = make_digit_corpus(10000, 2000)
    write_idx(xtr, ytr, out / MNIST_NAMES["train_images"], out / MNIST_NAMES["train_labels"])
    write_idx(xte, yte, out / MNIST_NAMES["test_images"], out / MNIST_NAMES["test_labels"])
    return out


def digit_paths(directory: Path) -> dict:
    return {key: str(Path(directory) / name) for key, name in MNIST_NAMES.items()}


@pytest.fixture(scope="session")
def small_digit_idx_dir(tmp_path_factory) -> Path:
    """A tiny digit corpus (240 train / 80 test) for fast plumbing tests."""
    out = tmp_path_factory.mktemp("digits_small")
    xtr, ytr, xte, yte = make_digit_corpus(240, 80, seed=77)
    write_idx(xtr, ytr, out / MNIST_NAMES["train_images"], out / MNIST_NAMES["train_labels"])
    write_idx(xte, yte, out / MNIST_NAMES["test_images"], out / MNIST_NAMES["test_labels"])
    return out


def make_sentiment_file(path, count: int, vocab: int, seed: int,
                        min_len: int = 15, max_len: int = 50) -> None:
    """Write a synthetic binary-sentiment token file in the line format.

    Each sample mixes a shared Zipf-like background vocabulary with words
    drawn from a class-specific band of ids, so the label is recoverable
    from word usage but no single token decides it.
    """
    rng = np.random.default_rng(seed)
    n_marker = max(10, vocab // 20)  # per-class marker band size
    pos_band = np.arange(2, 2 + n_marker)
    neg_band = np.arange(2 + n_marker, 2 + 2 * n_marker)
    background = np.arange(2 + 2 * n_marker, vocab)
    # Zipf-ish weights over the shared background
    bg_weights = 1.0 / np.arange(1, len(background) + 1)
    bg_weights /= bg_weights.sum()
    with open(path, "w", encoding="utf-8") as f:
        for _ in range(count):
            label = int(rng.integers(0, 2))
            band = pos_band if label == 1 else neg_band
            length = int(rng.integers(min_len, max_len + 1))
            ids = []
            for _ in range(length):
                if rng.random() < 0.3:
                    ids.append(int(rng.choice(band)))
                else:
                    ids.append(int(rng.choice(background, p=bg_weights)))
            f.write(" ".join([str(label)] + [str(i) for i in ids]) + "\n")


def make_raw_sentiment(path, count: int, seed: int, marker_rate: float = 0.3) -> None:
    """Write raw ``<label><TAB><text>`` lines for the text converter.

    Sentiment is carried by class-specific marker words mixed into a shared
    Zipf-distributed background vocabulary larger than the converter's
    vocabulary limit, so out-of-vocabulary remapping actually occurs.
    """
    rng = np.random.default_rng(seed)
    n_marker = 100
    pos = [f"pos{i}" for i in range(n_marker)]
    neg = [f"neg{i}" for i in range(n_marker)]
    background = [f"word{i}" for i in range(3000)]
    weights = 1.0 / np.arange(1, len(background) + 1)
    weights /= weights.sum()
    with open(path, "w", encoding="utf-8") as f:
        for _ in range(count):
            label = int(rng.integers(0, 2))
            band = pos if label == 1 else neg
            length = int(rng.integers(20, 61))
            tokens = []
            for _ in range(length):
                if rng.random() < marker_rate:
                    tokens.append(band[int(rng.integers(0, n_marker))])
                else:
                    tokens.append(background[int(rng.choice(len(background), p=weights))])
            f.write(f"{label}\t{' '.join(tokens)}\n")


@pytest.fixture(scope="session")
def sentiment_files(tmp_path_factory):
    """(train_file, test_file) token files for the benchmark sentiment task:
    6000 raw samples run through the text converter (vocabulary 2000) and
    split 5000 train / 1000 test."""
    from slimlstm.data import convert_text

    out = tmp_path_factory.mktemp("sentiment")
    raw = out / "raw.txt"
    converted = out / "converted.txt"
    make_raw_sentiment(raw, 6000, seed=303)
    convert_text(raw, converted, vocab_limit=2000)
    lines = converted.read_text(encoding="utf-8").splitlines()
    train = out / "train.txt"
    test = out / "test.txt"
    train.write_text("\n".join(lines[:5000]) + "\n", encoding="utf-8")
    test.write_text("\n".join(lines[5000:]) + "\n", encoding="utf-8")
    return str(train), str(test)


@pytest.fixture(scope="session")
def small_sentiment_files(tmp_path_factory):
    """Tiny sentiment pair (200 train / 80 test) for fast plumbing tests."""
    out = tmp_path_factory.mktemp("sentiment_small")
    train = out / "train.txt"
    test = out / "test.txt"
    make_sentiment_file(train, 200, vocab=300, seed=11)
    make_sentiment_file(test, 80, vocab=300, seed=22)
    return str(train), str(test)
