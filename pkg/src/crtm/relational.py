"""Contextual link function: attention, scoring, and its M-step updates.

A link from document d to d' is scored from two K-vectors: a weighted
average ``zbar`` of the responsibilities of the words around the anchor in
d, and the mean responsibilities ``phibar`` of d'.  Both sides pass through
a learned square transform before an elementwise product is projected onto
``eta``:

    score = exp(eta . (Q zbar * Q phibar') + nu)

Setting the transform to the identity and taking the context to be the
whole source document recovers the plain relational topic model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Document
from .embeddings import EmbeddingTable

CONTEXT_MODES = ("sentence", "singleton", "uniform", "positional", "document")


@dataclass
class LinkParams:
    eta: np.ndarray  # (K,)
    nu: float
    transform: np.ndarray  # (K, K); rows kept at unit L2 norm when learned
    n_negatives: int  # phantom unlinked pairs backing the closed-form regularizer
    q_lr: float  # learning rate for the transform update


@dataclass
class ContextView:
    """Token positions participating in one link's context, with weights."""

    positions: np.ndarray  # (C,) token indices into the source document
    weights: np.ndarray  # (C,) nonnegative, sums to 1


def init_link_params(
    n_topics: int,
    n_negatives: int,
    q_lr: float,
    seed: int,
    learn_transform: bool = True,
) -> LinkParams:
    """Zero eta/nu; transform = identity (+ row-normalized jitter if learned)."""
    if learn_transform:
        rng = np.random.default_rng(seed)
        q = np.eye(n_topics) + 0.01 * rng.random((n_topics, n_topics))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
    else:
        q = np.eye(n_topics)
    return LinkParams(
        eta=np.zeros(n_topics), nu=0.0, transform=q,
        n_negatives=n_negatives, q_lr=q_lr,
    )


def attention_weights(u_link: np.ndarray, context_vectors: np.ndarray, dim: int) -> np.ndarray:
    """Softmax of scaled dot products between the anchor and context vectors."""
    scores = context_vectors @ u_link / math.sqrt(dim)
    scores = scores - scores.max()
    weights = np.exp(scores)
    return weights / weights.sum()


def gaussian_span_weights(
    positions: np.ndarray, span: tuple[int, int], sigma: float
) -> np.ndarray:
    """Normalized Gaussian weights by token distance to the anchor span."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s, e = span
    dist = np.maximum(0, np.maximum(s - positions, positions - (e - 1)))
    weights = np.exp(-0.5 * (dist / sigma) ** 2)
    return weights / weights.sum()


def context_topic_average(weights: np.ndarray, phi_rows: np.ndarray) -> np.ndarray:
    """Weighted average of context responsibilities; stays in the simplex."""
    return weights @ phi_rows


def build_context(
    doc: Document,
    span: tuple[int, int],
    sentence: int,
    mode: str,
    embeddings: EmbeddingTable | None = None,
    sigma: float = 3.0,
) -> ContextView:
    """Context positions and weights for an anchor span under one mode.

    ``sentence`` uses attention against the mean embedding of the span;
    ``uniform`` and ``positional`` weight the enclosing sentence without
    embeddings; ``singleton`` restricts to the span itself; ``document``
    spreads uniform weight over every token.
    """
    if mode not in CONTEXT_MODES:
        raise ValueError(f"unknown context mode {mode!r}")
    s, e = span
    if mode == "document":
        positions = np.arange(doc.n_tokens)
        weights = np.full(doc.n_tokens, 1.0 / doc.n_tokens)
    elif mode == "singleton":
        positions = np.arange(s, e)
        weights = np.full(e - s, 1.0 / (e - s))
    else:
        sent_s, sent_e = doc.sentences[sentence]
        positions = np.arange(sent_s, sent_e)
        if mode == "uniform":
            weights = np.full(len(positions), 1.0 / len(positions))
        elif mode == "positional":
            weights = gaussian_span_weights(positions, span, sigma)
        else:  # sentence: scaled dot-product attention
            if embeddings is None:
                raise ValueError("sentence context mode requires embeddings")
            u_link = embeddings.lookup(doc.tokens[s:e]).mean(axis=0)
            context_vectors = embeddings.lookup(doc.tokens[positions])
            weights = attention_weights(u_link, context_vectors, embeddings.dim)
    return ContextView(positions=positions, weights=weights)


def link_log_score(z_src: np.ndarray, z_tgt: np.ndarray, params: LinkParams) -> float:
    q = params.transform
    return float(params.eta @ ((q @ z_src) * (q @ z_tgt)) + params.nu)


def link_score(z_src: np.ndarray, z_tgt: np.ndarray, params: LinkParams) -> float:
    """exp(eta . (Q z_src * Q z_tgt) + nu); strictly positive."""
    return _checked_exp(link_log_score(z_src, z_tgt, params))


def rtm_log_score(phibar_src: np.ndarray, phibar_tgt: np.ndarray,
                  eta: np.ndarray, nu: float) -> float:
    return float(eta @ (phibar_src * phibar_tgt) + nu)


def rtm_link_score(phibar_src: np.ndarray, phibar_tgt: np.ndarray,
                   eta: np.ndarray, nu: float) -> float:
    """Transform-free score on whole-document topic means."""
    return _checked_exp(rtm_log_score(phibar_src, phibar_tgt, eta, nu))


def _checked_exp(log_value: float) -> float:
    try:
        value = math.exp(log_value)
    except OverflowError as exc:
        raise FloatingPointError("link score overflowed; parameters have blown up") from exc
    if not math.isfinite(value):
        raise FloatingPointError("link score overflowed; parameters have blown up")
    return value


def source_phi_gradient(
    weights: np.ndarray, phibar_target: np.ndarray, params: LinkParams
) -> np.ndarray:
    """Per-context-token gradient of the expected link term, source side.

    Row j is weights[j] * Q^T (eta * Q phibar_target): the chain rule
    through the weighted context average.
    """
    q = params.transform
    base = q.T @ (params.eta * (q @ phibar_target))
    return np.outer(weights, base)


def target_phi_gradient(
    z_context: np.ndarray, n_target: int, params: LinkParams
) -> np.ndarray:
    """Gradient shared by every token of the target document."""
    q = params.transform
    return q.T @ (params.eta * (q @ z_context)) / n_target


def printed_phi_gradient(
    phibar_doc: np.ndarray, n_tokens: int, n_incident_links: int, params: LinkParams
) -> np.ndarray:
    """Verbatim alternative update term using the document's own mean rows.

    Applies eta * Q^2 phibar / N once per incident link; kept behind a
    config switch for comparison against the gradient-consistent form.
    """
    q = params.transform
    return n_incident_links * (params.eta * (q @ (q @ phibar_doc))) / n_tokens


def prior_mean_similarity(transform: np.ndarray) -> np.ndarray:
    """Expected transformed Hadamard product of two prior-mean documents.

    With a symmetric Dirichlet prior the mean proportions are uniform, so
    this is (Q m) * (Q m) with m = 1/K.
    """
    k = transform.shape[0]
    qm = transform @ np.full(k, 1.0 / k)
    return qm * qm


def update_eta_nu(
    pi_bar: np.ndarray, pi_alpha: np.ndarray, n_links: int, n_negatives: int
) -> tuple[np.ndarray, float]:
    """Closed-form update with phantom negative observations.

    The regularizer treats ``n_negatives`` unlinked pairs as observed with
    the prior-mean similarity ``pi_alpha``.  With zero negatives both
    parameters collapse to exact zero.
    """
    if n_links <= 0:
        raise ValueError("eta/nu update requires at least one link (L > 0)")
    if not np.all(pi_bar > 0):
        raise ValueError("eta/nu update requires every component of pi_bar > 0")
    total = float(pi_bar.sum())
    if total >= n_links:
        raise ValueError("eta/nu update requires sum(pi_bar) < L")
    prior_total = float(pi_alpha.sum())
    if prior_total >= 1.0:
        raise ValueError("eta/nu update requires sum(pi_alpha) < 1")
    nu = math.log(n_links - total) - math.log(
        n_negatives * (1.0 - prior_total) + n_links - total
    )
    eta = np.log(pi_bar) - np.log(pi_bar + n_negatives * pi_alpha) - nu
    return eta, nu


def transform_increment(
    transform: np.ndarray,
    src_vectors: np.ndarray,
    tgt_vectors: np.ndarray,
    eta: np.ndarray,
) -> np.ndarray:
    """Per-unit-learning-rate additive update for the transform.

    Entry (i, j) accumulates eta_i / K * (s_j (Q s')_i + s'_j (Q s)_i) over
    links; equals 1/K times the gradient of the summed expected link term.
    """
    k = transform.shape[0]
    raw = (transform @ tgt_vectors.T) @ src_vectors + (transform @ src_vectors.T) @ tgt_vectors
    return eta[:, None] * raw / k


def update_transform(
    transform: np.ndarray,
    src_vectors: np.ndarray,
    tgt_vectors: np.ndarray,
    eta: np.ndarray,
    lr: float,
) -> np.ndarray:
    """Gradient step on the transform followed by row L2 normalization."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    updated = transform + lr * transform_increment(transform, src_vectors, tgt_vectors, eta)
    norms = np.linalg.norm(updated, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise FloatingPointError("transform row collapsed to zero norm")
    return updated / norms


def expected_link_loglik(
    src_vectors: np.ndarray, tgt_vectors: np.ndarray, params: LinkParams
) -> float:
    """Mean expected log link value over a stacked set of link vectors."""
    if len(src_vectors) == 0:
        raise ValueError("no links to score")
    q = params.transform
    per_link = ((src_vectors @ q.T) * (tgt_vectors @ q.T)) @ params.eta + params.nu
    return float(per_link.mean())
