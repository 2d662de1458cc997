"""Trainable lookup embeddings mapping template ids to dense event vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_SCALE = 0.1


@dataclass
class EventVocabulary:
    """Dense row assignment for template ids, with one reserved unknown row."""

    index: dict[int, int]
    unknown_row: int
    dim: int

    @property
    def num_rows(self) -> int:
        return self.unknown_row + 1

    def rows_for(self, event_ids: Sequence[int]) -> np.ndarray:
        return np.array([self.index.get(t, self.unknown_row) for t in event_ids],
                        dtype=np.intp)


def build_vocab(template_ids: Iterable[int], dim: int, seed: int = 0) -> tuple[EventVocabulary, Tensor]:
    """Assign rows to the given template ids and initialize the embedding table.

    The table has one extra trailing row for unknown/unseen templates and is
    drawn from seeded uniform(-0.1, 0.1), so equal seeds give bit-identical
    tables.
    """
    ids = sorted(set(int(t) for t in template_ids))
    if not ids:
        raise ValueError("cannot build a vocabulary from zero templates")
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    vocab = EventVocabulary(index={t: i for i, t in enumerate(ids)},
                            unknown_row=len(ids), dim=dim)
    rng = np.random.default_rng(seed)
    table = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(vocab.num_rows, dim)),
                   requires_grad=True)
    return vocab, table


def embed_sequence(vocab: EventVocabulary, table: Tensor, event_ids: Sequence[int]) -> Tensor:
    """Look up one window of event ids: returns [n, dim], autodiff-aware."""
    return ad.index_rows(table, vocab.rows_for(event_ids))


def embed_batch(vocab: EventVocabulary, table: Tensor,
                batch_event_ids: Sequence[Sequence[int]]) -> Tensor:
    """Look up a batch of equal-length windows: returns [batch, n, dim]."""
    rows = np.stack([vocab.rows_for(ids) for ids in batch_event_ids])
    return ad.index_rows(table, rows)


def load_pretrained_vectors(path: str | Path, trainable: bool = False) -> tuple[EventVocabulary, Tensor]:
    """Import fixed vectors from JSON-lines records {template_id, vector}.

    The unknown row is appended as zeros. Set ``trainable`` to fine-tune the
    imported table instead of keeping it frozen.
    """
    entries: dict[int, list[float]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        entries[int(obj["template_id"])] = [float(v) for v in obj["vector"]]
    if not entries:
        raise ValueError(f"no vectors found in {path}")
    dims = {len(v) for v in entries.values()}
    if len(dims) != 1:
        raise ValueError(f"inconsistent vector widths in {path}: {sorted(dims)}")
    dim = dims.pop()
    ids = sorted(entries)
    vocab = EventVocabulary(index={t: i for i, t in enumerate(ids)},
                            unknown_row=len(ids), dim=dim)
    data = np.zeros((vocab.num_rows, dim))
    for t, i in vocab.index.items():
        data[i] = entries[t]
    return vocab, Tensor(data, requires_grad=trainable)
