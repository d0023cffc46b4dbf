"""Dataset ingestion: JSON-lines examples, CoNLL-U parses, GloVe vectors, vocabulary."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Fixed class order; label ids index into it.
LABELS = ("negative", "neutral", "positive")
LABEL_IDS = {name: k for k, name in enumerate(LABELS)}

PAD, UNK = "<pad>", "<unk>"


class DataError(ValueError):
    """Malformed input file; the message names the file and location."""


@dataclass(frozen=True)
class DependencyGraph:
    """Directed head -> dependent edges over nodes ``1..n``."""

    n: int
    edges: tuple  # of (head, dependent, relation)
    roots: tuple = ()

    @property
    def root(self) -> int:
        return self.roots[0] if self.roots else 0

    def heads(self) -> list:
        heads = [0] * (self.n + 1)
        for head, dep, _ in self.edges:
            heads[dep] = head
        return heads


def validate_graph(graph: DependencyGraph, where: str = "graph") -> DependencyGraph:
    seen = Counter()
    for head, dep, _ in graph.edges:
        if not (1 <= head <= graph.n and 1 <= dep <= graph.n):
            raise DataError(f"{where}: edge {head}->{dep} outside 1..{graph.n}")
        if head == dep:
            raise DataError(f"{where}: self-edge on node {dep}")
        seen[dep] += 1
    for node in range(1, graph.n + 1):
        expected = 0 if node in graph.roots else 1
        if seen[node] != expected:
            raise DataError(f"{where}: node {node} has {seen[node]} heads, expected {expected}")
    if graph.n and not graph.roots:
        raise DataError(f"{where}: no root")
    heads = graph.heads()
    for start in range(1, graph.n + 1):
        node, steps = start, 0
        while node != 0:
            node = heads[node]
            steps += 1
            if steps > graph.n:
                raise DataError(f"{where}: cycle through node {start}")
    return graph


@dataclass(frozen=True)
class Example:
    tokens: tuple
    aspect_start: int  # 1-based
    aspect_len: int
    label: str
    parse: DependencyGraph | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def label_id(self) -> int:
        return LABEL_IDS[self.label]

    @property
    def aspect(self) -> tuple:
        return self.tokens[self.aspect_start - 1:self.aspect_start - 1 + self.aspect_len]

    def to_record(self) -> dict:
        return {"tokens": list(self.tokens), "aspect_start": self.aspect_start,
                "aspect_len": self.aspect_len, "label": self.label}


def make_example(record: dict, where: str = "record") -> Example:
    try:
        tokens = record["tokens"]
        start = record["aspect_start"]
        length = record["aspect_len"]
        label = record["label"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{where}: missing field {exc}") from None
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"{where}: tokens must be a nonempty list of strings")
    if not isinstance(start, int) or not isinstance(length, int):
        raise DataError(f"{where}: aspect_start and aspect_len must be integers")
    if length < 1 or start < 1 or start + length - 1 > len(tokens):
        raise DataError(f"{where}: aspect span [{start}, {start + length - 1}] "
                        f"outside sentence of {len(tokens)} tokens")
    if label not in LABEL_IDS:
        raise DataError(f"{where}: unknown label {label!r}")
    return Example(tuple(tokens), start, length, label)


def load_examples(path) -> list[Example]:
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: malformed JSON ({exc.msg})") from None
            examples.append(make_example(record, where))
    return examples


def dump_examples(examples: Iterable[Example], path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")


def label_counts(examples: Iterable[Example]) -> dict:
    counts = Counter(ex.label for ex in examples)
    return {name: counts.get(name, 0) for name in LABELS}


def parse_conllu(path) -> list[DependencyGraph]:
    """Read one graph per blank-line separated block.

    Only ID, HEAD and DEPREL are consumed.  Multiword-token ranges (``3-4``)
    and empty nodes (``5.1``) are skipped.
    """
    path = Path(path)
    graphs = []
    rows: list = []
    block = 1
    block_line = 1

    def flush():
        nonlocal rows, block
        where = f"{path}: sentence block {block} (line {block_line})"
        edges, roots = [], []
        for lineno, node, head, rel in rows:
            if node != len(edges) + len(roots) + 1:
                raise DataError(f"{path}:{lineno}: token ids not consecutive in block {block}")
            if head == 0:
                roots.append(node)
            else:
                edges.append((head, node, rel))
        graphs.append(validate_graph(DependencyGraph(len(rows), tuple(edges), tuple(roots)), where))
        rows = []
        block += 1

    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                if rows:
                    flush()
                block_line = lineno + 1
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise DataError(f"{path}:{lineno}: expected 10 tab-separated columns, "
                                f"got {len(cols)} (sentence block {block})")
            if "-" in cols[0] or "." in cols[0]:
                continue
            try:
                node = int(cols[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer ID {cols[0]!r} "
                                f"(sentence block {block})") from None
            try:
                head = int(cols[6])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer HEAD {cols[6]!r} "
                                f"(sentence block {block})") from None
            rows.append((lineno, node, head, cols[7]))
    if rows:
        flush()
    return graphs


def attach_parses(examples: Sequence[Example], graphs: Sequence[DependencyGraph],
                  where: str = "parses") -> list[Example]:
    """Pair example ``i`` with parse block ``i``."""
    if len(examples) != len(graphs):
        raise DataError(f"{where}: {len(graphs)} parse blocks for {len(examples)} examples")
    out = []
    for k, (ex, graph) in enumerate(zip(examples, graphs), 1):
        if graph.n != ex.n:
            raise DataError(f"{where}: sentence block {k} has {graph.n} nodes "
                            f"but example {k} has {ex.n} tokens")
        out.append(replace(ex, parse=graph))
    return out


def load_dataset(examples_path, parses_path) -> list[Example]:
    return attach_parses(load_examples(examples_path), parse_conllu(parses_path),
                         where=str(parses_path))


class Vocabulary:
    """Token <-> id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    pad_id = 0
    unk_id = 1

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.itos = list(tokens)
        self.stoi = {tok: k for k, tok in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocab(examples: Sequence[Example], min_count: int = 1) -> Vocabulary:
    if not examples:
        raise ValueError("build_vocab needs at least one example")
    counts = Counter(tok for ex in examples for tok in ex.tokens)
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    return Vocabulary([PAD, UNK] + [t for t in kept if t not in (PAD, UNK)])


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    matrix: np.ndarray
    found: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_glove(path, vocab: Vocabulary, dim: int | None = None,
               rng: np.random.Generator | None = None) -> EmbeddingTable:
    """Fill a ``|V| x d`` matrix from a GloVe text file.

    Lookup is exact first, then lower-cased.  Tokens missing from the file
    are drawn from U(-0.25/d, 0.25/d); the pad row is zero.
    """
    path = Path(path)
    rng = rng if rng is not None else np.random.default_rng(0)
    wanted = set(vocab.itos) | {t.lower() for t in vocab.itos}
    vectors = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\r\n").split()
            if not parts:
                continue
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise DataError(f"{path}:{lineno}: no vector components")
            if len(parts) - 1 != dim:
                raise DataError(f"{path}:{lineno}: vector has {len(parts) - 1} components, "
                                f"expected {dim}")
            if parts[0] in wanted and parts[0] not in vectors:
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: unreadable float") from None
    if dim is None:
        raise DataError(f"{path}: empty embeddings file")
    bound = 0.25 / dim
    matrix = rng.uniform(-bound, bound, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    found = 0
    for k, tok in enumerate(vocab.itos):
        vec = vectors.get(tok)
        if vec is None:
            vec = vectors.get(tok.lower())
        if vec is not None:
            matrix[k] = vec
            found += 1
    return EmbeddingTable(vocab, matrix, found)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
