"""Corpus ingestion: markup parsing, tokenization, network assembly and splits.

Input corpora are JSONL files with one record per line:
``{"id": str, "title": str, "text": str}`` where ``text`` may contain
``[[Title]]`` / ``[[Title|anchor]]`` link spans.  Ingestion produces a
:class:`DocumentNetwork`: tokenized documents plus directed links anchored at
token spans, each span contained in a single sentence.
"""

from __future__ import annotations

import json
import logging
import pickle
import re
from collections import Counter
from dataclasses import dataclass
from hashlib import sha256

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE_BREAK = frozenset(".!?\n")


@dataclass
class Vocabulary:
    """Bijective word <-> id map with per-word corpus frequencies."""

    word_to_id: dict[str, int]
    id_to_word: list[str]
    counts: np.ndarray  # (V,) corpus frequency per word id

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def __len__(self) -> int:
        return len(self.id_to_word)

    def content_hash(self) -> str:
        """Stable hash of the word list, used to detect mismatched corpora."""
        return sha256("\n".join(self.id_to_word).encode("utf-8")).hexdigest()


@dataclass
class Document:
    doc_id: str
    title: str
    tokens: np.ndarray  # (N,) vocabulary ids
    sentences: list[tuple[int, int]]  # half-open token ranges tiling [0, N)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def sentence_of(self, position: int) -> int:
        for j, (s, e) in enumerate(self.sentences):
            if s <= position < e:
                return j
        raise ValueError(f"token position {position} outside every sentence")


@dataclass
class AnchorLink:
    """Directed link whose anchor occupies a token span of the source doc."""

    source: int  # document index in the network
    target: int
    span: tuple[int, int]  # half-open token range in the source document
    sentence: int  # index of the sentence containing the span


@dataclass
class DocumentNetwork:
    vocab: Vocabulary
    documents: list[Document]
    links: list[AnchorLink]

    @property
    def n_docs(self) -> int:
        return len(self.documents)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def doc_index(self) -> dict[str, int]:
        return {d.doc_id: i for i, d in enumerate(self.documents)}

    def title_index(self) -> dict[str, int]:
        idx: dict[str, int] = {}
        for i, d in enumerate(self.documents):
            idx.setdefault(d.title, i)
        return idx


@dataclass
class IngestReport:
    docs: int
    links: int
    unresolved: int
    pruned_anchors: int

    def to_json(self) -> dict:
        return {
            "docs": self.docs,
            "links": self.links,
            "unresolved": self.unresolved,
            "pruned_anchors": self.pruned_anchors,
        }


@dataclass
class ExtractedLink:
    """A link found in raw markup, located by char range in the plain text."""

    target: str
    anchor: str
    start: int
    end: int


@dataclass
class SplitSpec:
    """Disjoint partition of link indices for one evaluation task."""

    train: list[int]
    validation: list[int]
    test: list[int]
    task: str  # "anchor-prediction" | "link-prediction"
    seed: int


def parse_markup(text: str) -> tuple[str, list[ExtractedLink]]:
    """Strip ``[[Title|anchor]]`` spans, returning plain text and links.

    Each link span is replaced by its anchor text (the title when there is
    no pipe).  Char ranges locate the anchor within the returned plain text.
    An unterminated ``[[`` is kept verbatim as plain text; links with an
    empty title or anchor keep their surface text but are dropped.
    """
    parts: list[str] = []
    links: list[ExtractedLink] = []
    pos = 0
    out_len = 0
    while True:
        open_idx = text.find("[[", pos)
        if open_idx == -1:
            parts.append(text[pos:])
            break
        parts.append(text[pos:open_idx])
        out_len += open_idx - pos
        close_idx = text.find("]]", open_idx + 2)
        if close_idx == -1:
            logger.warning("unterminated link markup at char %d; kept as plain text", open_idx)
            parts.append(text[open_idx:])
            break
        inner = text[open_idx + 2 : close_idx]
        if "|" in inner:
            title, anchor = inner.split("|", 1)
        else:
            title = anchor = inner
        surface = anchor if anchor else title
        if title and anchor:
            links.append(ExtractedLink(title, anchor, out_len, out_len + len(anchor)))
        elif inner:
            logger.warning("dropped malformed link %r at char %d", inner, open_idx)
        if surface:
            parts.append(surface)
            out_len += len(surface)
        pos = close_idx + 2
    return "".join(parts), links


def tokenize_and_segment(
    text: str,
) -> tuple[list[str], list[tuple[int, int]], list[tuple[int, int]]]:
    """Lowercased alphanumeric-run tokens plus sentence and char spans.

    Sentences break wherever ``. ! ?`` or a newline occurs between tokens.
    The returned char spans (one per token, into ``text``) let callers map
    char ranges from :func:`parse_markup` onto token spans.
    """
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    breaks: list[int] = []
    prev_end = 0
    for m in _TOKEN_RE.finditer(text):
        if tokens and any(ch in _SENTENCE_BREAK for ch in text[prev_end : m.start()]):
            breaks.append(len(tokens))
        tokens.append(m.group().lower())
        spans.append((m.start(), m.end()))
        prev_end = m.end()
    if not tokens:
        return [], [], []
    starts = [0] + breaks
    sentences = [
        (s, starts[i + 1] if i + 1 < len(starts) else len(tokens))
        for i, s in enumerate(starts)
    ]
    return tokens, sentences, spans


def char_span_to_token_span(
    spans: list[tuple[int, int]], start: int, end: int
) -> tuple[int, int] | None:
    """Smallest token range overlapping the char range, or None."""
    idx = [i for i, (s, e) in enumerate(spans) if s < end and e > start]
    if not idx:
        return None
    return idx[0], idx[-1] + 1


def build_network(
    raw_docs, min_count: int = 5
) -> tuple[DocumentNetwork, IngestReport]:
    """Assemble a DocumentNetwork from (id, title, markup) records.

    Words occurring fewer than ``min_count`` times corpus-wide are removed;
    sentence ranges and anchor spans are re-indexed around the removals.
    Links are dropped (and counted) when their anchor span loses every token,
    when the span crosses a sentence boundary, or when the target title does
    not resolve to a surviving document.  Documents left empty are dropped
    together with their links.
    """
    records = list(raw_docs)
    ids = [r[0] for r in records]
    dupes = [i for i, c in Counter(ids).items() if c > 1]
    if dupes:
        raise ValueError(f"duplicate document id(s): {sorted(dupes)[:5]}")

    parsed = []
    for doc_id, title, markup in records:
        plain, mlinks = parse_markup(markup)
        tokens, sentences, spans = tokenize_and_segment(plain)
        anchors = [
            (ml.target, char_span_to_token_span(spans, ml.start, ml.end))
            for ml in mlinks
        ]
        parsed.append((doc_id, title, tokens, sentences, anchors))

    counts: Counter[str] = Counter()
    for _, _, tokens, _, _ in parsed:
        counts.update(tokens)
    keep = {w for w, c in counts.items() if c >= min_count}

    pruned = 0
    unresolved = 0
    filtered = []
    for doc_id, title, tokens, sentences, anchors in parsed:
        kept_flags = np.fromiter((w in keep for w in tokens), dtype=bool, count=len(tokens))
        kept_before = np.concatenate([[0], np.cumsum(kept_flags)])
        kept_words = [w for w, f in zip(tokens, kept_flags) if f]
        new_sentences = []
        for s, e in sentences:
            ns, ne = int(kept_before[s]), int(kept_before[e])
            if ne > ns:
                new_sentences.append((ns, ne))
        new_anchors = []
        for target, tspan in anchors:
            if tspan is None:
                pruned += 1
                continue
            s, e = tspan
            if not any(a <= s and e <= b for a, b in sentences):
                pruned += 1  # anchor text spanned a sentence break
                continue
            ns, ne = int(kept_before[s]), int(kept_before[e])
            if ne == ns:
                pruned += 1  # every anchor token fell below min_count
                continue
            new_anchors.append((target, (ns, ne)))
        if kept_words:
            filtered.append((doc_id, title, kept_words, new_sentences, new_anchors))

    final_counts: Counter[str] = Counter()
    for _, _, kept_words, _, _ in filtered:
        final_counts.update(kept_words)
    words = sorted(final_counts, key=lambda w: (-final_counts[w], w))
    word_to_id = {w: i for i, w in enumerate(words)}
    vocab = Vocabulary(
        word_to_id=word_to_id,
        id_to_word=words,
        counts=np.array([final_counts[w] for w in words], dtype=np.int64),
    )

    documents = []
    title_to_idx: dict[str, int] = {}
    for doc_id, title, kept_words, sents, _ in filtered:
        title_to_idx.setdefault(title, len(documents))
        documents.append(
            Document(
                doc_id=doc_id,
                title=title,
                tokens=np.array([word_to_id[w] for w in kept_words], dtype=np.int64),
                sentences=sents,
            )
        )

    links = []
    for di, (_, _, _, sents, anchors) in enumerate(filtered):
        for target, span in anchors:
            ti = title_to_idx.get(target)
            if ti is None or ti == di:
                unresolved += 1
                continue
            sent_idx = next(
                j for j, (a, b) in enumerate(sents) if a <= span[0] and span[1] <= b
            )
            links.append(AnchorLink(source=di, target=ti, span=span, sentence=sent_idx))

    network = DocumentNetwork(vocab=vocab, documents=documents, links=links)
    report = IngestReport(
        docs=len(documents), links=len(links), unresolved=unresolved, pruned_anchors=pruned
    )
    return network, report


def make_anchor_split(network: DocumentNetwork, seed: int) -> SplitSpec:
    """Hide one uniformly chosen outgoing link per source document.

    The hidden set is shuffled and divided half/half into validation and
    test (validation gets the floor).  Remaining links form the train set.
    """
    if network.n_links < 1:
        raise ValueError("network has no links to split")
    rng = np.random.default_rng(seed)
    by_source: dict[int, list[int]] = {}
    for i, link in enumerate(network.links):
        by_source.setdefault(link.source, []).append(i)
    hidden = []
    for src in sorted(by_source):
        candidates = by_source[src]
        hidden.append(candidates[int(rng.integers(len(candidates)))])
    order = rng.permutation(len(hidden))
    shuffled = [hidden[i] for i in order]
    n_val = len(shuffled) // 2
    validation = sorted(shuffled[:n_val])
    test = sorted(shuffled[n_val:])
    hidden_set = set(hidden)
    train = [i for i in range(network.n_links) if i not in hidden_set]
    return SplitSpec(train=train, validation=validation, test=test,
                     task="anchor-prediction", seed=seed)


def make_edge_split(network: DocumentNetwork, fraction: float, seed: int) -> SplitSpec:
    """Hide floor(fraction * L) links uniformly at random as the test set."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    n_hidden = int(fraction * network.n_links)
    if n_hidden == 0:
        logger.warning("edge split with fraction %g hides 0 of %d links",
                       fraction, network.n_links)
    order = rng.permutation(network.n_links)
    test = sorted(int(i) for i in order[:n_hidden])
    test_set = set(test)
    train = [i for i in range(network.n_links) if i not in test_set]
    return SplitSpec(train=train, validation=[], test=test,
                     task="link-prediction", seed=seed)


def read_jsonl_corpus(path) -> list[tuple[str, str, str]]:
    """Read (id, title, text) records, reporting the line of any bad record."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed JSON on line {lineno}: {exc}") from exc
            for key in ("id", "title", "text"):
                if key not in rec:
                    raise ValueError(f"record on line {lineno} missing {key!r}")
            docs.append((str(rec["id"]), str(rec["title"]), str(rec["text"])))
    return docs


def save_network(network: DocumentNetwork, path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(network, fh, protocol=4)


def load_network(path) -> DocumentNetwork:
    with open(path, "rb") as fh:
        network = pickle.load(fh)
    if not isinstance(network, DocumentNetwork):
        raise ValueError(f"{path} does not contain a document network")
    return network


def save_split(split: SplitSpec, path) -> None:
    payload = {
        "task": split.task,
        "seed": split.seed,
        "train": split.train,
        "validation": split.validation,
        "test": split.test,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_split(path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return SplitSpec(
        train=[int(i) for i in payload["train"]],
        validation=[int(i) for i in payload["validation"]],
        test=[int(i) for i in payload["test"]],
        task=payload["task"],
        seed=int(payload["seed"]),
    )
