"""Variational EM driver: E-step sweeps, M-step updates, convergence control.

Every E-step sweep runs against parameters and neighbor statistics frozen at
the start of the sweep, so token updates vectorize across the whole corpus.
The M-step then refreshes beta, the link parameters and the transform in
that order.  Convergence is controlled by the expected link value on the
validation links; pure LDA runs fall back to the variational bound.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .corpus import DocumentNetwork, SplitSpec
from .embeddings import EmbeddingTable
from .model import ModelBundle
from .relational import (
    LinkParams,
    build_context,
    init_link_params,
    prior_mean_similarity,
    update_eta_nu,
    update_transform,
)
from .topics import (
    TopicModelParams,
    VariationalState,
    digamma,
    init_model,
    update_beta,
)

logger = logging.getLogger(__name__)

CONVERGENCE_SLACK = 1e-9


@dataclass
class TrainConfig:
    n_topics: int = 50
    alpha: float = 5.0
    n_negatives: int = 2000
    q_lr: float = 0.01
    max_iters: int = 100
    patience: int = 3
    seed: int = 0
    context_mode: str = "sentence"  # sentence | singleton | uniform | positional | document
    sigma: float = 3.0
    q_mode: str = "learned"  # learned | identity
    phi_grad_mode: str = "gradient"  # gradient | printed
    pi_source: str = "context"  # context | document: source side of the link stats
    e_step_iters: int = 10
    e_step_tol: float = 1e-3  # early stop on mean |delta gamma| within a sweep
    threads: int = 1
    check_invariants: bool = False


# training-time setup per named variant: (context_mode, q_mode)
VARIANT_CONFIGS = {
    "crtm": ("sentence", "learned"),
    "crtm_1": ("singleton", "learned"),
    "crtm_u": ("uniform", "learned"),
    "crtm_p": ("positional", "learned"),
    "crtm_i": ("sentence", "identity"),
    "rtm": ("document", "identity"),
}


@dataclass
class TrainReport:
    iterations: int
    val_scores: list[float]
    e_ms: list[float]
    m_ms: list[float]
    m_rel_ms: list[float]  # relational share of each M-step
    stop_reason: str


def config_for_variant(variant: str, base: TrainConfig | None = None) -> TrainConfig:
    if variant not in VARIANT_CONFIGS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANT_CONFIGS)}")
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    cfg.context_mode, cfg.q_mode = VARIANT_CONFIGS[variant]
    return cfg


def parse_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key = value`` config format; unknown keys are rejected."""
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno} is not 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not hasattr(cfg, key):
                raise ValueError(f"{path}: unknown config key {key!r} on line {lineno}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                setattr(cfg, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(cfg, key, int(value))
            elif isinstance(current, float):
                setattr(cfg, key, float(value))
            else:
                setattr(cfg, key, value)
    return cfg


def has_converged(history, patience: int) -> bool:
    """True when the last ``patience`` scores never beat the prior best."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(history) <= patience:
        return False
    best_before = max(history[:-patience])
    return all(s <= best_before + CONVERGENCE_SLACK for s in history[-patience:])


@dataclass
class _LinkCache:
    """Precomputed per-link context geometry over the flat token layout."""

    src: np.ndarray  # (L,) source document index
    tgt: np.ndarray  # (L,) target document index
    ctx_flat: np.ndarray  # concatenated context token positions, flat indexing
    ctx_weights: np.ndarray  # matching weights
    ctx_link: np.ndarray  # link id per context row
    tgt_flat: np.ndarray  # concatenated target-document token positions
    tgt_link: np.ndarray  # link id per target row
    tgt_scale: np.ndarray  # 1 / N_target per target row

    @property
    def n_links(self) -> int:
        return len(self.src)

    def zbar(self, phi: np.ndarray) -> np.ndarray:
        """Per-link weighted context averages from the current phi."""
        k = phi.shape[1]
        out = np.zeros((self.n_links, k))
        np.add.at(out, self.ctx_link, self.ctx_weights[:, None] * phi[self.ctx_flat])
        return out


def _build_link_cache(
    network: DocumentNetwork,
    link_ids,
    offsets: np.ndarray,
    config: TrainConfig,
    embeddings: EmbeddingTable | None,
) -> _LinkCache:
    src, tgt = [], []
    ctx_flat, ctx_weights, ctx_link = [], [], []
    tgt_flat, tgt_link, tgt_scale = [], [], []
    for li, link_id in enumerate(link_ids):
        link = network.links[link_id]
        doc = network.documents[link.source]
        view = build_context(
            doc, link.span, link.sentence, config.context_mode,
            embeddings=embeddings, sigma=config.sigma,
        )
        src.append(link.source)
        tgt.append(link.target)
        ctx_flat.append(offsets[link.source] + view.positions)
        ctx_weights.append(view.weights)
        ctx_link.append(np.full(len(view.positions), li, dtype=np.int64))
        t0, t1 = int(offsets[link.target]), int(offsets[link.target + 1])
        tgt_flat.append(np.arange(t0, t1))
        tgt_link.append(np.full(t1 - t0, li, dtype=np.int64))
        tgt_scale.append(np.full(t1 - t0, 1.0 / (t1 - t0)))
    empty = np.empty(0, dtype=np.int64)
    return _LinkCache(
        src=np.array(src, dtype=np.int64),
        tgt=np.array(tgt, dtype=np.int64),
        ctx_flat=np.concatenate(ctx_flat) if ctx_flat else empty,
        ctx_weights=np.concatenate(ctx_weights) if ctx_weights else empty.astype(float),
        ctx_link=np.concatenate(ctx_link) if ctx_link else empty,
        tgt_flat=np.concatenate(tgt_flat) if tgt_flat else empty,
        tgt_link=np.concatenate(tgt_link) if tgt_link else empty,
        tgt_scale=np.concatenate(tgt_scale) if tgt_scale else empty.astype(float),
    )


def _relational_gradients(
    cache: _LinkCache,
    phibar: np.ndarray,
    zbar: np.ndarray,
    lp: LinkParams,
    n_tokens: int,
    lengths: np.ndarray,
    offsets: np.ndarray,
    mode: str,
) -> np.ndarray:
    """Per-token additive terms for the phi update, from frozen link stats."""
    k = phibar.shape[1]
    grad = np.zeros((n_tokens, k))
    if cache.n_links == 0 or not lp.eta.any():
        return grad
    q = lp.transform
    if mode == "printed":
        # verbatim alternative: eta * Q^2 phibar_d / N_d once per incident link
        incident = np.zeros(len(lengths))
        np.add.at(incident, cache.src, 1.0)
        np.add.at(incident, cache.tgt, 1.0)
        per_doc = (incident / lengths)[:, None] * ((phibar @ q.T) @ q.T * lp.eta)
        grad += np.repeat(per_doc, lengths, axis=0)
        return grad
    # gradient-consistent form: chain rule through the context average
    src_base = ((phibar[cache.tgt] @ q.T) * lp.eta) @ q  # rows Q^T(eta * Q phibar_tgt)
    np.add.at(grad, cache.ctx_flat, cache.ctx_weights[:, None] * src_base[cache.ctx_link])
    tgt_base = ((zbar @ q.T) * lp.eta) @ q  # rows Q^T(eta * Q zbar)
    np.add.at(grad, cache.tgt_flat, cache.tgt_scale[:, None] * tgt_base[cache.tgt_link])
    return grad


def _check_invariants(state: VariationalState, params: TopicModelParams,
                      lp: LinkParams, caches: list[_LinkCache], learned_q: bool) -> None:
    row_sums = state.phi.sum(axis=1)
    assert np.max(np.abs(row_sums - 1.0)) <= 1e-9, "phi rows must sum to 1"
    assert np.all(state.gamma > 0), "gamma must stay positive"
    assert np.max(np.abs(params.beta.sum(axis=1) - 1.0)) <= 1e-9, "beta rows must sum to 1"
    if learned_q:
        q_norms = np.linalg.norm(lp.transform, axis=1)
        assert np.max(np.abs(q_norms - 1.0)) <= 1e-9, "transform rows must have unit norm"
    for cache in caches:
        if cache.n_links:
            sums = np.zeros(cache.n_links)
            np.add.at(sums, cache.ctx_link, cache.ctx_weights)
            assert np.max(np.abs(sums - 1.0)) <= 1e-9, "context weights must sum to 1"
    assert np.all(np.isfinite(lp.eta)) and np.isfinite(lp.nu), "link params must stay finite"


def fit(
    network: DocumentNetwork,
    split: SplitSpec,
    embeddings: EmbeddingTable | None,
    config: TrainConfig,
) -> tuple[ModelBundle, TrainReport]:
    """Train topics and the link function by variational EM.

    With an empty train link set this degenerates to plain LDA: the link
    parameters stay at their initialization and the variational bound
    replaces the validation link score.  Deterministic for a fixed seed with
    single-threaded execution.
    """
    if config.context_mode == "sentence" and embeddings is None and split.train:
        raise ValueError("sentence context mode requires embeddings")
    if config.threads != 1:
        logger.warning("parallel E-step not enabled; running single-threaded")

    lengths = np.array([d.n_tokens for d in network.documents], dtype=np.int64)
    token_ids = np.concatenate([d.tokens for d in network.documents]) if len(lengths) else np.empty(0, dtype=np.int64)
    n_tokens = int(lengths.sum())

    params, state = init_model(
        config.n_topics, network.vocab.size, config.alpha, config.seed, lengths
    )
    lp = init_link_params(
        config.n_topics, config.n_negatives, config.q_lr, config.seed + 1,
        learn_transform=config.q_mode == "learned",
    )

    offsets = state.offsets
    train_cache = _build_link_cache(network, split.train, offsets, config, embeddings)
    val_cache = _build_link_cache(network, split.validation, offsets, config, embeddings)
    pure_lda = train_cache.n_links == 0
    if pure_lda:
        logger.warning("no train links: training plain LDA, link parameters left at init")
    if not pure_lda and val_cache.n_links == 0:
        logger.warning("validation set empty: monitoring the train-link score instead")

    log_beta_tok = np.log(params.beta[:, token_ids]).T if n_tokens else np.empty((0, config.n_topics))
    zbar_train = train_cache.zbar(state.phi)

    val_scores: list[float] = []
    e_ms: list[float] = []
    m_ms: list[float] = []
    m_rel_ms: list[float] = []
    stop_reason = "max_iters"
    iterations = 0

    for iteration in range(config.max_iters):
        # ---- E-step against frozen global parameters and neighbor stats
        t_e = time.perf_counter()
        grad = _relational_gradients(
            train_cache, state.phibar, zbar_train, lp, n_tokens,
            lengths, offsets, config.phi_grad_mode,
        )
        gamma = state.gamma
        phi = state.phi
        for _ in range(config.e_step_iters):
            elog = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
            logits = log_beta_tok + np.repeat(elog, lengths, axis=0) + grad
            logits -= logits.max(axis=1, keepdims=True)
            phi = np.exp(logits)
            phi /= phi.sum(axis=1, keepdims=True)
            new_gamma = config.alpha + np.add.reduceat(phi, offsets[:-1], axis=0)
            delta = float(np.mean(np.abs(new_gamma - gamma)))
            gamma = new_gamma
            if delta < config.e_step_tol:
                break
        state.phi = phi
        state.gamma = gamma
        state.recompute_phibar()
        zbar_train = train_cache.zbar(state.phi)
        e_ms.append((time.perf_counter() - t_e) * 1000.0)

        # ---- M-step: beta, then eta/nu from link stats, then the transform
        t_m = time.perf_counter()
        params.beta = update_beta(state.phi, token_ids, network.vocab.size)
        log_beta_tok = np.log(params.beta[:, token_ids]).T
        t_rel = time.perf_counter()
        if not pure_lda:
            if config.pi_source == "context":
                src_vectors = zbar_train
            else:
                src_vectors = state.phibar[train_cache.src]
            tgt_vectors = state.phibar[train_cache.tgt]
            q = lp.transform
            pi_bar = ((src_vectors @ q.T) * (tgt_vectors @ q.T)).sum(axis=0)
            pi_alpha = prior_mean_similarity(q)
            try:
                lp.eta, lp.nu = update_eta_nu(
                    pi_bar, pi_alpha, train_cache.n_links, config.n_negatives
                )
            except ValueError as exc:
                raise FloatingPointError(f"eta/nu update failed at iteration {iteration}: {exc}") from exc
            if config.q_mode == "learned":
                lp.transform = update_transform(
                    lp.transform, src_vectors, tgt_vectors, lp.eta, config.q_lr
                )
            if not (np.all(np.isfinite(lp.eta)) and np.isfinite(lp.nu)
                    and np.all(np.isfinite(lp.transform))):
                raise FloatingPointError(f"non-finite link parameters at iteration {iteration}")
        now = time.perf_counter()
        m_rel_ms.append((now - t_rel) * 1000.0)
        m_ms.append((now - t_m) * 1000.0)

        # ---- convergence statistic
        if pure_lda:
            from .topics import lda_elbo

            score = lda_elbo(token_ids, lengths, params, state) / max(n_tokens, 1)
        else:
            monitor = val_cache if val_cache.n_links else train_cache
            zbar_mon = monitor.zbar(state.phi)
            q = lp.transform
            per_link = ((zbar_mon @ q.T) * (state.phibar[monitor.tgt] @ q.T)) @ lp.eta + lp.nu
            score = float(per_link.mean())
        val_scores.append(score)
        iterations = iteration + 1
        logger.info("iter %d, val_score %.6f, e_ms %.1f, m_ms %.1f",
                    iteration, score, e_ms[-1], m_ms[-1])

        if config.check_invariants:
            _check_invariants(state, params, lp, [train_cache, val_cache],
                              config.q_mode == "learned")

        if has_converged(val_scores, config.patience):
            stop_reason = "patience"
            break

    bundle = ModelBundle(
        params=params,
        link_params=lp,
        state=state,
        config=config,
        vocab_size=network.vocab.size,
        vocab_hash=network.vocab.content_hash(),
        doc_ids=[d.doc_id for d in network.documents],
        train_pairs=sorted(
            {(network.links[i].source, network.links[i].target) for i in split.train}
        ),
    )
    report = TrainReport(
        iterations=iterations,
        val_scores=val_scores,
        e_ms=e_ms,
        m_ms=m_ms,
        m_rel_ms=m_rel_ms,
        stop_reason=stop_reason,
    )
    return bundle, report


def relational_m_step(
    src_vectors: np.ndarray,
    tgt_vectors: np.ndarray,
    transform: np.ndarray,
    n_negatives: int,
    q_lr: float,
) -> tuple[np.ndarray, float, np.ndarray]:
    """One relational M-step on cached link vectors; returns (eta, nu, Q).

    Exposed separately so the cost of the link-parameter updates can be
    measured in isolation.
    """
    pi_bar = ((src_vectors @ transform.T) * (tgt_vectors @ transform.T)).sum(axis=0)
    pi_alpha = prior_mean_similarity(transform)
    eta, nu = update_eta_nu(pi_bar, pi_alpha, len(src_vectors), n_negatives)
    new_q = update_transform(transform, src_vectors, tgt_vectors, eta, q_lr)
    return eta, nu, new_q
