"""Trained model bundle: topic and link parameters plus variational state."""

from __future__ import annotations

import pickle
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .relational import LinkParams
from .topics import TopicModelParams, VariationalState

if TYPE_CHECKING:  # avoid a runtime cycle with trainer
    from .trainer import TrainConfig


@dataclass
class ModelBundle:
    params: TopicModelParams
    link_params: LinkParams
    state: VariationalState
    config: "TrainConfig"
    vocab_size: int
    vocab_hash: str  # hash of the training vocabulary, checked at use time
    doc_ids: list[str]
    train_pairs: list[tuple[int, int]]  # (source, target) links seen in training


def save_model(bundle: ModelBundle, path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(bundle, fh, protocol=4)


def load_model(path) -> ModelBundle:
    with open(path, "rb") as fh:
        bundle = pickle.load(fh)
    if not isinstance(bundle, ModelBundle):
        raise ValueError(f"{path} does not contain a model bundle")
    return bundle


def check_vocab_match(bundle: ModelBundle, vocab_hash: str) -> None:
    if bundle.vocab_hash != vocab_hash:
        raise ValueError(
            "model was trained on a different corpus (vocabulary hash mismatch)"
        )
