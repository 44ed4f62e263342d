import dataclasses
import pickle

import numpy as np
import pytest

from crtm.corpus import SplitSpec, build_network, make_anchor_split
from crtm.embeddings import train_sgns
from crtm.trainer import (
    TrainConfig,
    config_for_variant,
    fit,
    has_converged,
    parse_config_file,
)

# ---------------------------------------------------------------- fixtures


def _toy_network(seed=0, n_docs=16, sentences_per_doc=4):
    rng = np.random.default_rng(seed)
    themes = {
        0: ["star", "orbit", "planet", "comet", "moon"],
        1: ["cell", "gene", "protein", "enzyme", "virus"],
    }
    docs = []
    for i in range(n_docs):
        theme = themes[i % 2]
        parts = []
        for s in range(sentences_per_doc):
            words = list(rng.choice(theme, size=6))
            if s == 1:
                target = (i + 2) % n_docs  # same theme two docs later
                words.insert(3, f"[[T{target}|{theme[0]}]]")
            parts.append(" ".join(words) + ".")
        docs.append((f"d{i}", f"T{i}", " ".join(parts)))
    network, _ = build_network(docs, min_count=1)
    return network


def _small_config(**overrides):
    base = dict(
        n_topics=4,
        alpha=1.0,
        n_negatives=50,
        q_lr=0.01,
        max_iters=8,
        patience=3,
        seed=1,
        context_mode="uniform",
        q_mode="learned",
        e_step_iters=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ------------------------------------------------------------ has_converged


def test_has_converged_examples():
    assert has_converged([1, 2, 3], 3) is False
    assert has_converged([3, 2, 2, 2], 3) is True
    assert has_converged([1, 2, 1.999999999], 1) is True  # inside the slack
    assert has_converged([1, 2, 3, 4], 2) is False
    assert has_converged([5], 1) is False


# -------------------------------------------------------------------- fit


def test_fit_runs_and_reports():
    network = _toy_network()
    split = make_anchor_split(network, seed=0)
    bundle, report = fit(network, split, None, _small_config())
    assert report.iterations >= 1
    assert len(report.val_scores) == report.iterations
    assert len(report.e_ms) == report.iterations
    assert report.stop_reason in ("patience", "max_iters")
    assert bundle.params.beta.shape == (4, network.vocab.size)
    assert np.allclose(bundle.params.beta.sum(axis=1), 1.0, atol=1e-9)


def test_fit_empty_train_links_is_pure_lda():
    network = _toy_network()
    # all links hidden: the train set is empty, relational terms vanish
    all_test = SplitSpec(
        train=[], validation=[], test=list(range(network.n_links)),
        task="anchor-prediction", seed=0,
    )
    cfg = _small_config(max_iters=4)
    bundle, _ = fit(network, all_test, None, cfg)
    assert np.all(bundle.link_params.eta == 0.0)
    assert bundle.link_params.nu == 0.0

    # a link-free copy of the same corpus must produce the same beta
    stripped = dataclasses.replace(network, links=[])
    empty_split = SplitSpec(train=[], validation=[], test=[],
                            task="anchor-prediction", seed=0)
    bundle2, _ = fit(stripped, empty_split, None, cfg)
    assert np.array_equal(bundle.params.beta, bundle2.params.beta)
    assert np.array_equal(bundle.state.gamma, bundle2.state.gamma)


def test_fit_deterministic_bitwise():
    network = _toy_network()
    split = make_anchor_split(network, seed=2)
    cfg = _small_config(max_iters=5)
    b1, _ = fit(network, split, None, cfg)
    b2, _ = fit(network, split, None, cfg)
    assert pickle.dumps(b1.params.beta) == pickle.dumps(b2.params.beta)
    assert pickle.dumps(b1.link_params.transform) == pickle.dumps(b2.link_params.transform)
    assert pickle.dumps(b1.state.phi) == pickle.dumps(b2.state.phi)


def test_fit_invariants_along_the_way():
    network = _toy_network()
    split = make_anchor_split(network, seed=1)
    cfg = _small_config(max_iters=6, check_invariants=True)
    bundle, report = fit(network, split, None, cfg)
    assert report.iterations >= 1  # invariant assertions ran every iteration
    norms = np.linalg.norm(bundle.link_params.transform, axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-9


def test_fit_sentence_mode_requires_embeddings():
    network = _toy_network()
    split = make_anchor_split(network, seed=0)
    with pytest.raises(ValueError, match="embeddings"):
        fit(network, split, None, _small_config(context_mode="sentence"))


def test_fit_sentence_mode_with_embeddings():
    network = _toy_network()
    split = make_anchor_split(network, seed=0)
    emb = train_sgns(network, dim=12, window=3, negatives=4, epochs=1, seed=0)
    bundle, report = fit(network, split, emb, _small_config(context_mode="sentence"))
    assert report.iterations >= 1
    assert np.all(np.isfinite(bundle.link_params.eta))


def test_rtm_variant_config_mapping_is_bitwise_identical():
    network = _toy_network()
    split = make_anchor_split(network, seed=3)
    explicit = _small_config(context_mode="document", q_mode="identity", max_iters=3)
    via_variant = config_for_variant("rtm", _small_config(max_iters=3))
    b1, _ = fit(network, split, None, explicit)
    b2, _ = fit(network, split, None, via_variant)
    assert pickle.dumps(b1.params.beta) == pickle.dumps(b2.params.beta)
    assert np.array_equal(b1.link_params.transform, np.eye(4))


def test_printed_phi_gradient_mode_runs_and_differs():
    network = _toy_network()
    split = make_anchor_split(network, seed=0)
    b_grad, _ = fit(network, split, None, _small_config(max_iters=4))
    b_printed, _ = fit(network, split, None,
                       _small_config(max_iters=4, phi_grad_mode="printed"))
    assert not np.array_equal(b_grad.params.beta, b_printed.params.beta)


def test_fit_converges_on_larger_synthetic():
    from crtm.evaluation import generate_planted_corpus

    network, _ = generate_planted_corpus(
        n_topics=6, vocab_size=150, n_docs=200, avg_len=40, links_per_doc=2, seed=5
    )
    split = make_anchor_split(network, seed=5)
    cfg = TrainConfig(
        n_topics=6, alpha=1.0, n_negatives=200, q_lr=0.01, max_iters=100,
        patience=3, seed=5, context_mode="uniform", e_step_iters=6,
    )
    bundle, report = fit(network, split, None, cfg)
    assert report.stop_reason == "patience"
    assert report.iterations < 100
    best_so_far = np.maximum.accumulate(report.val_scores)
    assert np.all(np.diff(best_so_far) >= -1e-12)


# ------------------------------------------------------------- config file


def test_parse_config_file(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(
        "n_topics = 12\nalpha = 2.5\ncontext_mode = positional\nsigma = 4.0\n"
        "# comment line\nq_mode = identity\n"
    )
    cfg = parse_config_file(path)
    assert cfg.n_topics == 12
    assert cfg.alpha == 2.5
    assert cfg.context_mode == "positional"
    assert cfg.sigma == 4.0
    assert cfg.q_mode == "identity"


def test_parse_config_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("not_a_key = 3\n")
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_file(path)


def test_defaults_match_reference_settings():
    cfg = TrainConfig()
    assert cfg.n_topics == 50
    assert cfg.alpha == 5.0
    assert cfg.n_negatives == 2000
    assert cfg.q_lr == 0.01
