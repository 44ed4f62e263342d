"""Anchor ranking across model variants, link probabilities, fold-in inference.

Every token position of the source document is scored as a candidate anchor
for the given target, positions are reduced to per-word maxima, and words
are ranked by descending score with ties broken by lower position then
lower word id.  Ranking only ever depends on scores through their order, so
all scoring happens on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import DocumentNetwork
from .embeddings import EmbeddingTable
from .model import ModelBundle
from .relational import rtm_link_score
from .topics import expected_log_theta

VARIANTS = ("crtm", "crtm_1", "crtm_u", "crtm_p", "crtm_i", "rtm_trick")

DEFAULT_SIGMA = 3.0


@dataclass
class AnchorRanking:
    source: int
    target: int
    variant: str
    entries: list[tuple[int, int, float]]  # (word id, best position, score) descending

    def top_words(self, n: int) -> list[int]:
        return [w for w, _, _ in self.entries[:n]]

    def rank_of(self, word_ids) -> int | None:
        """1-based rank of the best ranked word among ``word_ids``."""
        wanted = set(word_ids)
        for rank, (w, _, _) in enumerate(self.entries, start=1):
            if w in wanted:
                return rank
        return None

    def to_json(self, network: DocumentNetwork, top_n: int | None = None) -> dict:
        entries = self.entries if top_n is None else self.entries[:top_n]
        return {
            "source": network.documents[self.source].doc_id,
            "target": network.documents[self.target].doc_id,
            "variant": self.variant,
            "ranking": [
                [network.vocab.id_to_word[w], int(pos), float(score)]
                for w, pos, score in entries
            ],
        }


def positional_weights(center: int, context_indices, sigma: float) -> np.ndarray:
    """Gaussian weights by token distance to ``center``, normalized to 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    idx = np.asarray(context_indices, dtype=np.float64)
    weights = np.exp(-0.5 * ((idx - center) / sigma) ** 2)
    return weights / weights.sum()


def _position_log_scores(
    bundle: ModelBundle,
    doc,
    phi_src: np.ndarray,
    phibar_tgt: np.ndarray,
    variant: str,
    embeddings: EmbeddingTable | None,
    sigma: float,
) -> np.ndarray:
    """Log link score per source token position under one scoring variant."""
    lp = bundle.link_params
    q = np.eye(bundle.params.n_topics) if variant == "crtm_i" else lp.transform
    eta = lp.eta
    nu = lp.nu
    if variant == "rtm_trick":
        # per-token responsibilities stand in for the source-side average
        return (phi_src * phibar_tgt) @ eta + nu
    if variant in ("crtm_1", "crtm_u"):
        # singleton context at scoring time (crtm_u trains with sentence
        # averages but restricts to the candidate word when ranking)
        qt = q @ phibar_tgt
        return ((phi_src @ q.T) * (eta * qt)).sum(axis=1) + nu

    qt = eta * (q @ phibar_tgt)  # folded target side
    scores = np.empty(doc.n_tokens)
    for sent_s, sent_e in doc.sentences:
        phi_sent = phi_src[sent_s:sent_e]
        n = sent_e - sent_s
        if variant == "crtm_p":
            idx = np.arange(n, dtype=np.float64)
            raw = np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / sigma) ** 2)
            weights = raw / raw.sum(axis=1, keepdims=True)
        else:  # crtm / crtm_i: attention against each candidate's embedding
            vectors = embeddings.lookup(doc.tokens[sent_s:sent_e])
            sims = vectors @ vectors.T / math.sqrt(embeddings.dim)
            sims -= sims.max(axis=1, keepdims=True)
            weights = np.exp(sims)
            weights /= weights.sum(axis=1, keepdims=True)
        zbar = weights @ phi_sent  # row i: context average centered on token i
        scores[sent_s:sent_e] = (zbar @ q.T) @ qt + nu
    return scores


def rank_anchors(
    bundle: ModelBundle,
    network: DocumentNetwork,
    source: int,
    target: int,
    variant: str,
    embeddings: EmbeddingTable | None = None,
    sigma: float | None = None,
    state=None,
) -> AnchorRanking:
    """Rank the source document's words as anchor candidates for a target.

    ``state`` defaults to the bundle's training state; pass a folded-in
    state to rank documents outside the training set.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant in ("crtm", "crtm_i") and embeddings is None:
        raise ValueError(f"variant {variant!r} requires embeddings")
    state = state if state is not None else bundle.state
    doc = network.documents[source]
    if doc.n_tokens == 0 or doc.tokens.max() >= bundle.vocab_size:
        raise ValueError("source document shares no vocabulary with the model")
    phi_src = state.doc_phi(source)
    phibar_tgt = state.phibar[target]
    log_scores = _position_log_scores(
        bundle, doc, phi_src, phibar_tgt, variant,
        embeddings, sigma if sigma is not None else DEFAULT_SIGMA,
    )

    best: dict[int, tuple[float, int]] = {}
    for pos in range(doc.n_tokens):
        w = int(doc.tokens[pos])
        score = float(log_scores[pos])
        if w not in best or score > best[w][0]:
            best[w] = (score, pos)
    ordered = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))
    entries = [(w, pos, math.exp(score)) for w, (score, pos) in ordered]
    return AnchorRanking(source=source, target=target, variant=variant, entries=entries)


def link_probability(bundle: ModelBundle, d: int, d_prime: int, state=None) -> float:
    """Whole-document link score; the learned transform plays no part here."""
    state = state if state is not None else bundle.state
    lp = bundle.link_params
    return rtm_link_score(state.phibar[d], state.phibar[d_prime], lp.eta, lp.nu)


def infer_heldout_state(
    bundle: ModelBundle,
    token_ids,
    max_iters: int = 200,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Fold-in inference with frozen beta and no relational terms.

    Out-of-vocabulary ids (negative values) are skipped; iteration stops
    when the L1 change of gamma drops below ``tol``.
    """
    ids = np.asarray(
        [t for t in np.asarray(token_ids, dtype=np.int64) if 0 <= t < bundle.vocab_size],
        dtype=np.int64,
    )
    if len(ids) == 0:
        raise ValueError("document has no in-vocabulary tokens")
    k = bundle.params.n_topics
    alpha = bundle.params.alpha
    log_beta = np.log(bundle.params.beta[:, ids]).T  # (N, K)
    gamma = np.full(k, alpha + len(ids) / k)
    phi = np.full((len(ids), k), 1.0 / k)
    for _ in range(max_iters):
        logits = log_beta + expected_log_theta(gamma)
        logits -= logits.max(axis=1, keepdims=True)
        phi = np.exp(logits)
        phi /= phi.sum(axis=1, keepdims=True)
        new_gamma = alpha + phi.sum(axis=0)
        if float(np.abs(new_gamma - gamma).sum()) < tol:
            gamma = new_gamma
            break
        gamma = new_gamma
    return gamma, phi
