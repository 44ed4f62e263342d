import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crtm.corpus import (
    build_network,
    char_span_to_token_span,
    load_network,
    load_split,
    make_anchor_split,
    make_edge_split,
    parse_markup,
    read_jsonl_corpus,
    save_network,
    save_split,
    tokenize_and_segment,
)


# ---------------------------------------------------------------- parse_markup


def test_parse_piped_link():
    plain, links = parse_markup("see [[World Wide Web|WWW]] today")
    assert plain == "see WWW today"
    assert len(links) == 1
    link = links[0]
    assert link.target == "World Wide Web"
    assert link.anchor == "WWW"
    assert plain[link.start : link.end] == "WWW"


def test_parse_pipeless_link_uses_title_as_anchor():
    plain, links = parse_markup("[[Physics]]")
    assert plain == "Physics"
    assert links[0].target == "Physics"
    assert links[0].anchor == "Physics"
    assert (links[0].start, links[0].end) == (0, 7)


def test_parse_two_links_non_overlapping_ranges():
    # hand trace: "a b c dd" with anchors at (2,3) and (6,8)
    plain, links = parse_markup("a [[B|b]] c [[D|dd]]")
    assert plain == "a b c dd"
    assert [(l.start, l.end) for l in links] == [(2, 3), (6, 8)]
    assert [l.target for l in links] == ["B", "D"]


def test_parse_unterminated_is_plain_text():
    plain, links = parse_markup("intro [[Broken and the rest")
    assert plain == "intro [[Broken and the rest"
    assert links == []


def test_parse_empty_title_or_anchor_dropped():
    plain, links = parse_markup("x [[|word]] y [[Title|]] z")
    assert links == []
    assert plain == "x word y Title z"


_plain_chunk = st.text(
    alphabet="abcdefghij XYZ.!?\n",
    min_size=0,
    max_size=12,
).filter(lambda s: "[[" not in s and "]]" not in s)
_name = st.text(alphabet="abcdefgh XYZ", min_size=1, max_size=10).filter(
    lambda s: s.strip() and "|" not in s
)


@given(
    chunks=st.lists(_plain_chunk, min_size=1, max_size=6),
    link_specs=st.lists(st.tuples(_name, _name), min_size=0, max_size=5),
)
@settings(max_examples=200)
def test_parse_roundtrip_property(chunks, link_specs):
    # interleave plain chunks with link spans, then check every returned
    # range slices back to its anchor text
    markup = []
    for i, chunk in enumerate(chunks):
        markup.append(chunk)
        if i < len(link_specs):
            title, anchor = link_specs[i]
            markup.append(f"[[{title}|{anchor}]]")
    raw = "".join(markup)
    plain, links = parse_markup(raw)
    assert len(links) == min(len(chunks), len(link_specs))
    for link, (title, anchor) in zip(links, link_specs):
        assert plain[link.start : link.end] == anchor
        assert link.target == title


# ------------------------------------------------------- tokenize_and_segment


def test_tokenize_two_sentences():
    tokens, sentences, _ = tokenize_and_segment("Hello, world. Bye!")
    assert tokens == ["hello", "world", "bye"]
    assert sentences == [(0, 2), (2, 3)]


def test_tokenize_splits_on_non_alphanumeric():
    tokens, sentences, _ = tokenize_and_segment("e=mc2")
    assert tokens == ["e", "mc2"]
    assert sentences == [(0, 2)]


def test_tokenize_hand_segmentation():
    tokens, sentences, _ = tokenize_and_segment("A b? C d.")
    assert tokens == ["a", "b", "c", "d"]
    assert sentences == [(0, 2), (2, 4)]


def test_tokenize_empty_text():
    assert tokenize_and_segment("") == ([], [], [])


def test_tokenize_sentences_tile_token_range():
    text = "One two. Three four five!\nSix. seven"
    tokens, sentences, spans = tokenize_and_segment(text)
    covered = [i for s, e in sentences for i in range(s, e)]
    assert covered == list(range(len(tokens)))
    assert len(spans) == len(tokens)
    for (s, e), tok in zip(spans, tokens):
        assert text[s:e].lower() == tok


def test_char_span_to_token_span():
    _, _, spans = tokenize_and_segment("see WWW today")
    assert char_span_to_token_span(spans, 4, 7) == (1, 2)
    assert char_span_to_token_span(spans, 0, 3) == (0, 1)
    assert char_span_to_token_span(spans, 3, 4) is None  # whitespace only


# ---------------------------------------------------------------- build_network


def _docs_two() -> list[tuple[str, str, str]]:
    return [
        ("a", "A-title", "alpha beta sees [[B-title|b]] beta alpha."),
        ("b", "B-title", "b is about alpha beta things. alpha beta."),
    ]


def test_build_network_resolves_one_link():
    network, report = build_network(_docs_two(), min_count=1)
    assert report.docs == 2
    assert report.links == 1
    assert report.unresolved == 0
    link = network.links[0]
    src = network.documents[link.source]
    assert src.doc_id == "a"
    assert network.documents[link.target].doc_id == "b"
    s, e = link.span
    assert [network.vocab.id_to_word[t] for t in src.tokens[s:e]] == ["b"]


def test_build_network_unresolved_target_counted():
    docs = [("a", "A", "alpha [[Missing Page|beta]] alpha beta")]
    network, report = build_network(docs, min_count=1)
    assert report.links == 0
    assert report.unresolved == 1
    assert network.n_links == 0


def test_build_network_min_count_prunes_anchor():
    # "rare" occurs once; with min_count=2 the anchor loses every token
    docs = [
        ("a", "A", "alpha beta [[B|rare]] alpha beta"),
        ("b", "B", "alpha beta alpha beta"),
        ("c", "C", "alpha beta alpha beta"),
    ]
    network, report = build_network(docs, min_count=2)
    assert report.pruned_anchors == 1
    assert report.links == 0
    assert "rare" not in network.vocab.word_to_id


def test_build_network_duplicate_id_rejected():
    docs = [("a", "A", "x y"), ("a", "B", "x y")]
    with pytest.raises(ValueError, match="duplicate"):
        build_network(docs, min_count=1)


def test_build_network_reindexes_spans_after_pruning():
    # "filler" occurs once and is removed; anchor span must shift left
    docs = [
        ("a", "A", "filler alpha beta [[B|gamma]] alpha."),
        ("b", "B", "gamma gamma alpha beta alpha beta."),
    ]
    network, report = build_network(docs, min_count=2)
    assert report.links == 1
    link = network.links[0]
    src = network.documents[link.source]
    s, e = link.span
    assert [network.vocab.id_to_word[t] for t in src.tokens[s:e]] == ["gamma"]
    sent_s, sent_e = src.sentences[link.sentence]
    assert sent_s <= s and e <= sent_e


def test_build_network_empty_doc_dropped_with_links():
    docs = [
        ("a", "A", "once."),  # every token below min_count -> doc dropped
        ("b", "B", "alpha beta alpha beta [[A|alpha]]"),
    ]
    network, report = build_network(docs, min_count=2)
    assert report.docs == 1
    assert report.links == 0
    assert report.unresolved == 1  # link into the dropped document


def test_build_network_span_inside_single_sentence_everywhere():
    rng = np.random.default_rng(7)
    vocab = ["cat", "dog", "fish", "bird", "tree", "rock"]
    docs = []
    for i in range(20):
        words = rng.choice(vocab, size=30)
        text = []
        for j, w in enumerate(words):
            text.append(w)
            if rng.random() < 0.2:
                text.append(".")
            if j == 10 and i % 2 == 0:
                text.append(f"[[T{(i + 1) % 20}|{vocab[i % 6]}]]")
        docs.append((f"d{i}", f"T{i}", " ".join(text)))
    network, _ = build_network(docs, min_count=1)
    for link in network.links:
        doc = network.documents[link.source]
        s, e = link.span
        sent_s, sent_e = doc.sentences[link.sentence]
        assert sent_s <= s < e <= sent_e
        assert e - s >= 1


def test_vocabulary_invariants():
    network, _ = build_network(_docs_two(), min_count=1)
    vocab = network.vocab
    assert len(vocab.id_to_word) == len(vocab.word_to_id) == vocab.size
    for i, w in enumerate(vocab.id_to_word):
        assert vocab.word_to_id[w] == i
    for doc in network.documents:
        assert doc.tokens.max() < vocab.size
        assert doc.n_tokens >= 1


# ----------------------------------------------------------------------- splits


def _linked_network(n_docs=12, links_per_doc=3, seed=0):
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        body = ["alpha", "beta", "gamma", "delta"] * 3
        links = []
        for _ in range(links_per_doc):
            j = int(rng.integers(n_docs))
            if j != i:
                links.append(f"[[T{j}|beta]]")
        docs.append((f"d{i}", f"T{i}", " ".join(body + links)))
    network, _ = build_network(docs, min_count=1)
    return network


def test_anchor_split_hides_one_per_source():
    network = _linked_network()
    split = make_anchor_split(network, seed=3)
    hidden = set(split.validation) | set(split.test)
    sources_with_links = {l.source for l in network.links}
    hidden_sources = [network.links[i].source for i in hidden]
    assert sorted(set(hidden_sources)) == sorted(sources_with_links)
    assert len(hidden_sources) == len(set(hidden_sources))  # exactly one each


def test_anchor_split_partition_and_determinism():
    network = _linked_network()
    a = make_anchor_split(network, seed=11)
    b = make_anchor_split(network, seed=11)
    assert (a.train, a.validation, a.test) == (b.train, b.validation, b.test)
    everything = sorted(a.train + a.validation + a.test)
    assert everything == list(range(network.n_links))
    assert not (set(a.train) & set(a.validation))
    assert not (set(a.train) & set(a.test))
    assert not (set(a.validation) & set(a.test))


def test_anchor_split_hidden_fraction_band_on_snowball_like_corpus():
    # ~65% of docs carry 4 outgoing links: average total degree about 5,
    # and hiding one link per linking document lands in the reported band.
    rng = np.random.default_rng(42)
    n_docs = 400
    docs = []
    for i in range(n_docs):
        body = ["alpha", "beta", "gamma", "delta", "epsilon"] * 4
        parts = list(body)
        if rng.random() < 0.65:
            targets = rng.choice(n_docs, size=4, replace=False)
            for j in targets:
                if int(j) != i:
                    parts.append(f"[[T{int(j)}|beta]]")
        docs.append((f"d{i}", f"T{i}", " ".join(parts)))
    network, _ = build_network(docs, min_count=1)
    avg_degree = 2 * network.n_links / network.n_docs
    assert 4.0 < avg_degree < 6.5
    split = make_anchor_split(network, seed=0)
    frac = (len(split.validation) + len(split.test)) / network.n_links
    assert 0.21 <= frac <= 0.33


def test_edge_split_counts_and_determinism():
    network = _linked_network(n_docs=40, links_per_doc=3, seed=5)
    assert network.n_links >= 50
    fraction = 0.10
    a = make_edge_split(network, fraction, seed=2)
    b = make_edge_split(network, fraction, seed=2)
    assert a.test == b.test
    assert len(a.test) == int(fraction * network.n_links)
    assert a.validation == []
    assert sorted(a.train + a.test) == list(range(network.n_links))


def test_edge_split_rejects_bad_fraction():
    network = _linked_network()
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            make_edge_split(network, bad, seed=0)


def test_edge_split_zero_hidden_warns(caplog):
    network = _linked_network(n_docs=4, links_per_doc=1, seed=1)
    with caplog.at_level("WARNING"):
        split = make_edge_split(network, 1.0 / (network.n_links + 1), seed=0)
    assert split.test == []
    assert any("hides 0" in rec.message for rec in caplog.records)


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_split_partition_property(seed):
    network = _linked_network(seed=9)
    split = make_anchor_split(network, seed=seed)
    assert sorted(split.train + split.validation + split.test) == list(
        range(network.n_links)
    )


# ------------------------------------------------------------------------- io


def test_jsonl_roundtrip_and_network_pickle(tmp_path):
    path = tmp_path / "corpus.jsonl"
    with open(path, "w") as fh:
        for doc_id, title, text in _docs_two():
            fh.write(json.dumps({"id": doc_id, "title": title, "text": text}) + "\n")
    docs = read_jsonl_corpus(path)
    assert docs == _docs_two()
    network, _ = build_network(docs, min_count=1)
    net_path = tmp_path / "network.pkl"
    save_network(network, net_path)
    loaded = load_network(net_path)
    assert loaded.vocab.id_to_word == network.vocab.id_to_word
    assert loaded.n_links == network.n_links
    assert np.array_equal(loaded.documents[0].tokens, network.documents[0].tokens)


def test_jsonl_reports_bad_line():
    import io
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".jsonl", delete=False) as fh:
        fh.write('{"id": "a", "title": "A", "text": "x"}\n')
        fh.write('{"id": "b", "title": "B", "text": "y"}\n')
        fh.write("{broken\n")
        name = fh.name
    with pytest.raises(ValueError, match="line 3"):
        read_jsonl_corpus(name)


def test_split_file_roundtrip(tmp_path):
    network = _linked_network()
    split = make_anchor_split(network, seed=4)
    path = tmp_path / "split.json"
    save_split(split, path)
    loaded = load_split(path)
    assert loaded == split
