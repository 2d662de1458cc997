"""Log parsing: template extraction via a fixed-depth parse tree, plus
fixed-length windowing of parsed event streams.

The parser follows the classic fixed-depth-tree design: lines are tokenized
on whitespace, parameter-looking tokens are masked to a wildcard before tree
descent, the tree is keyed first by token count and then by the leading
tokens, and leaves hold groups of similar lines that share a template.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

WILDCARD = "<*>"
UNKNOWN_TEMPLATE = -1

_HEX_RE = re.compile(r"^0x[0-9a-fA-F]+$")


@dataclass
class RawLogRecord:
    """One raw log line; ``anomaly_label`` marks a fault-indicating line."""

    line_no: int
    timestamp: str
    content: str
    anomaly_label: bool = False


@dataclass
class LogTemplate:
    template_id: int
    tokens: list[str]
    match_count: int = 1

    @property
    def template_string(self) -> str:
        return " ".join(self.tokens)


@dataclass
class EventSequence:
    """A fixed-length window of parsed events with its labels."""

    event_ids: list[int]
    positions: list[int]
    seq_label: bool
    root_cause_flags: list[bool]


class _Node:
    __slots__ = ("children",)

    def __init__(self):
        self.children: dict = {}


def mask_parameters(tokens: Sequence[str]) -> list[str]:
    """Replace parameter-looking tokens (any digit, or 0x-hex) with the wildcard."""
    out = []
    for tok in tokens:
        if any(c.isdigit() for c in tok) or _HEX_RE.match(tok):
            out.append(WILDCARD)
        else:
            out.append(tok)
    return out


class ParseTree:
    """Fixed-depth template-matching tree.

    depth counts the levels from the root to a leaf (root, token-count node,
    depth-2 token levels); similarity is the fraction of positions where a
    candidate's tokens equal the template's non-wildcard tokens.
    """

    def __init__(self, depth: int = 4, similarity_threshold: float = 0.5,
                 max_children: int = 100):
        if depth < 3:
            raise ValueError("depth must be >= 3")
        if not 0.0 < similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must be in (0, 1)")
        if max_children < 2:
            raise ValueError("max_children must be >= 2")
        self.depth = depth
        self.similarity_threshold = similarity_threshold
        self.max_children = max_children
        self.root = _Node()
        self.templates: list[LogTemplate] = []
        self.frozen = False

    # -- internals ----------------------------------------------------------

    def _token_levels(self) -> int:
        return self.depth - 2

    def _descend(self, tokens: list[str], create: bool) -> list[LogTemplate] | None:
        """Walk count + token levels; returns the leaf group list or None."""
        node = self.root
        key = len(tokens)
        if key not in node.children:
            if not create:
                return None
            node.children[key] = _Node()
        node = node.children[key]

        for level in range(self._token_levels()):
            if level >= len(tokens):
                break
            token = tokens[level]
            children = node.children
            if token in children:
                node = children[token]
            elif WILDCARD in children and (token == WILDCARD or len(children) >= self.max_children):
                node = children[WILDCARD]
            elif create:
                if len(children) >= self.max_children - 1 and token != WILDCARD:
                    child = children.setdefault(WILDCARD, _Node())
                else:
                    child = children.setdefault(token, _Node())
                node = child
            elif WILDCARD in children:
                node = children[WILDCARD]
            else:
                return None
        leaf = node.children.setdefault("$leaf", []) if create else node.children.get("$leaf")
        return leaf

    @staticmethod
    def _similarity(template: Sequence[str], tokens: Sequence[str]) -> tuple[float, int]:
        # Wildcard-to-wildcard positions count as equal (incoming tokens are
        # pre-masked), which makes reparsing an already-known line exact.
        same = 0
        wildcards = 0
        for a, b in zip(template, tokens):
            if a == b:
                same += 1
            if a == WILDCARD:
                wildcards += 1
        return same / len(template), wildcards

    def _best_match(self, groups: list[LogTemplate], tokens: list[str]) -> tuple[LogTemplate | None, float]:
        best, best_sim, best_wild = None, -1.0, -1
        for tpl in groups:
            sim, wild = self._similarity(tpl.tokens, tokens)
            if sim > best_sim or (sim == best_sim and wild > best_wild):
                best, best_sim, best_wild = tpl, sim, wild
        return best, best_sim

    # -- public API ---------------------------------------------------------

    def freeze(self) -> None:
        """Switch to read-only matching; unmatched lines map to UNKNOWN_TEMPLATE."""
        self.frozen = True

    def parse_line(self, content: str) -> int:
        """Match ``content`` to a template id, creating/merging templates as needed."""
        tokens = mask_parameters(content.split())
        if not tokens:
            raise ValueError("empty log content")

        if self.frozen:
            leaf = self._descend(tokens, create=False)
            if not leaf:
                return UNKNOWN_TEMPLATE
            match, sim = self._best_match(leaf, tokens)
            if match is not None and sim >= self.similarity_threshold:
                return match.template_id
            return UNKNOWN_TEMPLATE

        leaf = self._descend(tokens, create=True)
        match, sim = self._best_match(leaf, tokens)
        if match is not None and sim >= self.similarity_threshold:
            match.tokens = [a if a == b else WILDCARD for a, b in zip(match.tokens, tokens)]
            match.match_count += 1
            return match.template_id
        if match is not None and len(leaf) >= self.max_children:
            # Leaf at capacity: fold into the closest group to keep it bounded.
            match.tokens = [a if a == b else WILDCARD for a, b in zip(match.tokens, tokens)]
            match.match_count += 1
            return match.template_id
        template = LogTemplate(template_id=len(self.templates), tokens=list(tokens))
        self.templates.append(template)
        leaf.append(template)
        return template.template_id


def window_sequences(records: Sequence[RawLogRecord], event_ids: Sequence[int],
                     n: int, stride: int | None = None) -> list[EventSequence]:
    """Group a parsed record stream into fixed windows of length ``n``.

    A window's label is the OR of its per-line labels; the trailing partial
    window is dropped. ``stride`` defaults to ``n`` (non-overlapping).
    """
    if n < 1:
        raise ValueError("window length must be >= 1")
    stride = n if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(records) != len(event_ids):
        raise ValueError("records and event_ids must align")

    sequences = []
    for start in range(0, len(records) - n + 1, stride):
        chunk = records[start:start + n]
        flags = [r.anomaly_label for r in chunk]
        sequences.append(EventSequence(
            event_ids=list(event_ids[start:start + n]),
            positions=[r.line_no for r in chunk],
            seq_label=any(flags),
            root_cause_flags=flags,
        ))
    return sequences


# ---------------------------------------------------------------------------
# file formats

def load_records(log_path: str | Path, label_path: str | Path | None = None,
                 marker_mode: bool = False, timestamp_tokens: int = 1) -> list[RawLogRecord]:
    """Read a plain-text log, one record per line (1-based line numbers).

    Labels come either from ``label_path`` (one anomalous line number per
    line) or, with ``marker_mode``, from a leading "+" (anomalous) / "-"
    (normal) marker on each line. The first ``timestamp_tokens`` whitespace
    tokens are treated as an opaque timestamp.
    """
    labeled: set[int] = set()
    if label_path is not None:
        if marker_mode:
            raise ValueError("use either a label file or marker mode, not both")
        for line in Path(label_path).read_text().splitlines():
            line = line.strip()
            if line:
                labeled.add(int(line))

    records = []
    for line_no, raw in enumerate(Path(log_path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        label = line_no in labeled
        if marker_mode:
            marker, _, rest = line.partition(" ")
            if marker not in ("+", "-"):
                raise ValueError(f"line {line_no}: expected +/- marker, got {marker!r}")
            label = marker == "+"
            line = rest.strip()
        parts = line.split()
        ts = " ".join(parts[:timestamp_tokens])
        content = " ".join(parts[timestamp_tokens:])
        if not content:
            raise ValueError(f"line {line_no}: empty content after timestamp")
        records.append(RawLogRecord(line_no=line_no, timestamp=ts,
                                    content=content, anomaly_label=label))
    return records


def parse_records(tree: ParseTree, records: Iterable[RawLogRecord]) -> list[int]:
    return [tree.parse_line(r.content) for r in records]


def write_sequences_jsonl(sequences: Iterable[EventSequence], path: str | Path) -> None:
    with open(path, "w") as fh:
        for seq in sequences:
            fh.write(json.dumps({
                "event_ids": seq.event_ids,
                "positions": seq.positions,
                "seq_label": seq.seq_label,
                "root_cause_flags": seq.root_cause_flags,
            }) + "\n")


def read_sequences_jsonl(path: str | Path) -> list[EventSequence]:
    sequences = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        sequences.append(EventSequence(
            event_ids=[int(i) for i in obj["event_ids"]],
            positions=[int(i) for i in obj["positions"]],
            seq_label=bool(obj["seq_label"]),
            root_cause_flags=[bool(b) for b in obj["root_cause_flags"]],
        ))
    return sequences


def write_template_catalog(templates: Iterable[LogTemplate], path: str | Path) -> None:
    with open(path, "w") as fh:
        for tpl in templates:
            fh.write(json.dumps({
                "template_id": tpl.template_id,
                "template_string": tpl.template_string,
                "match_count": tpl.match_count,
            }) + "\n")


def read_template_catalog(path: str | Path) -> list[LogTemplate]:
    templates = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        templates.append(LogTemplate(
            template_id=int(obj["template_id"]),
            tokens=obj["template_string"].split(),
            match_count=int(obj["match_count"]),
        ))
    return templates
