"""Word vectors for the attention mechanism: in-corpus SGNS training and IO.

The text format is ``V p`` on the first line, then one ``word v1 ... vp``
line per word.  Vocabulary words absent from a loaded file get the zero
vector, which yields a flat attention contribution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import DocumentNetwork, Vocabulary

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # (V, p)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_words(self) -> int:
        return self.vectors.shape[0]

    def lookup(self, ids) -> np.ndarray:
        """Vectors for a batch of vocabulary ids; total over [0, V)."""
        return self.vectors[np.asarray(ids, dtype=np.int64)]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def _skipgram_pairs(network: DocumentNetwork, window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for doc in network.documents:
        toks = doc.tokens
        for k in range(1, window + 1):
            if len(toks) <= k:
                break
            centers.append(toks[:-k])
            contexts.append(toks[k:])
            centers.append(toks[k:])
            contexts.append(toks[:-k])
    if not centers:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_sgns(
    network: DocumentNetwork,
    dim: int = 100,
    window: int = 10,
    negatives: int = 20,
    epochs: int = 5,
    seed: int = 0,
    lr0: float = 0.025,
    batch_size: int = 1024,
) -> EmbeddingTable:
    """Skip-gram with negative sampling, trained on the corpus alone.

    Single-threaded and deterministic for a given seed.  Updates are applied
    in minibatches with a linearly decaying learning rate and no subsampling
    of frequent words.  Noise words are drawn from the unigram distribution
    raised to 3/4.
    """
    vocab = network.vocab
    if vocab.size < 2:
        raise ValueError("need a vocabulary of at least 2 words to train embeddings")
    if dim < 2:
        raise ValueError("embedding dimension must be >= 2")
    rng = np.random.default_rng(seed)
    W = (rng.random((vocab.size, dim)) - 0.5) / dim
    C = np.zeros((vocab.size, dim))

    noise = vocab.counts.astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    centers, contexts = _skipgram_pairs(network, window)
    n_pairs = len(centers)
    if n_pairs == 0:
        logger.warning("corpus produced no skip-gram pairs; returning initial vectors")
        return EmbeddingTable(W)

    n_batches = (n_pairs + batch_size - 1) // batch_size
    total_steps = epochs * n_batches
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        for b in range(n_batches):
            sel = order[b * batch_size : (b + 1) * batch_size]
            lr = lr0 * max(1.0 - step / total_steps, 1e-4)
            step += 1
            c_idx = centers[sel]
            neg = np.searchsorted(noise_cdf, rng.random((len(sel), negatives)))
            tgt = np.concatenate([contexts[sel][:, None], neg], axis=1)  # (B, 1+n)
            w = W[c_idx]  # (B, p)
            cv = C[tgt]  # (B, 1+n, p)
            scores = np.einsum("bp,bnp->bn", w, cv)
            g = _sigmoid(scores)
            g[:, 0] -= 1.0  # positive label on the first column
            gw = np.einsum("bn,bnp->bp", g, cv)
            gc = g[:, :, None] * w[:, None, :]
            np.add.at(W, c_idx, -lr * gw)
            np.add.at(C, tgt.ravel(), -lr * gc.reshape(-1, dim))
    return EmbeddingTable(W)


def save_embeddings(table: EmbeddingTable, vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.n_words} {table.dim}\n")
        for word, row in zip(vocab.id_to_word, table.vectors):
            fh.write(word + " " + " ".join(f"{v:.8g}" for v in row) + "\n")


def load_embeddings(path, vocab: Vocabulary) -> tuple[EmbeddingTable, dict]:
    """Load vectors for a vocabulary; absent words become zero vectors.

    Returns the table and a coverage report
    ``{"covered": n, "missing": n, "ignored": n}`` where ignored counts file
    words outside the vocabulary.  Any line whose arity disagrees with the
    header dimension fails the whole file.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'V p'")
        _, dim = int(header[0]), int(header[1])
        vectors = np.zeros((vocab.size, dim))
        covered: set[int] = set()
        ignored = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim}"
                )
            word = parts[0]
            word_id = vocab.word_to_id.get(word)
            if word_id is None:
                ignored += 1
                continue
            vectors[word_id] = np.array([float(v) for v in parts[1:]])
            covered.add(word_id)
    report = {
        "covered": len(covered),
        "missing": vocab.size - len(covered),
        "ignored": ignored,
    }
    if report["missing"]:
        logger.warning("embeddings cover %d of %d vocabulary words",
                       report["covered"], vocab.size)
    return EmbeddingTable(vectors), report
