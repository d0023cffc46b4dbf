"""Convert public aspect-sentiment files into the JSON-lines example format.

Two inputs are understood:

* SemEval XML (``<sentence><text/><aspectTerms><aspectTerm term= polarity=
  from= to=/>``); ``conflict`` terms are dropped.
* The three-line ``.raw`` layout: a sentence with ``$T$`` in place of the
  aspect, the aspect itself, then ``-1``/``0``/``1``.

Usage::

    python -m eegcn.convert Restaurants_Train.xml train.jsonl
    python -m eegcn.convert train.raw train.jsonl

Dependency parses are not produced here; run any CoNLL-U parser over the
``tokens`` of each record (one sentence block per line of output, same order).
"""

from __future__ import annotations

import argparse
import re
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

from .corpus import DataError, Example, dump_examples, make_example

TOKEN = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")
RAW_POLARITY = {"-1": "negative", "0": "neutral", "1": "positive"}


def tokenize(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in TOKEN.finditer(text)]


def _span(tokens, start, end, where):
    inside = [k for k, (_, lo, hi) in enumerate(tokens) if lo < end and hi > start]
    if not inside:
        raise DataError(f"{where}: aspect offsets {start}:{end} cover no token")
    return inside[0] + 1, inside[-1] - inside[0] + 1


def from_semeval_xml(path) -> list[Example]:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise DataError(f"{path}: {exc}") from None
    out = []
    for sent in root.iter("sentence"):
        where = f"{path}: sentence {sent.get('id', '?')}"
        text = sent.findtext("text") or ""
        tokens = tokenize(text)
        for term in sent.iter("aspectTerm"):
            polarity = term.get("polarity")
            if polarity == "conflict":
                continue
            start, length = _span(tokens, int(term.get("from")), int(term.get("to")), where)
            out.append(make_example({"tokens": [t for t, _, _ in tokens], "aspect_start": start,
                                     "aspect_len": length, "label": polarity}, where))
    return out


def from_raw(path) -> list[Example]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) % 3:
        raise DataError(f"{path}: {len(lines)} lines is not a multiple of 3")
    out = []
    for k in range(0, len(lines), 3):
        sentence, aspect, polarity = (line.strip() for line in lines[k:k + 3])
        where = f"{path}:{k + 1}"
        if "$T$" not in sentence:
            raise DataError(f"{where}: no $T$ placeholder")
        if polarity not in RAW_POLARITY:
            raise DataError(f"{where}: polarity {polarity!r} not in -1/0/1")
        left, _, right = sentence.partition("$T$")
        left_toks = [t for t, _, _ in tokenize(left)]
        aspect_toks = [t for t, _, _ in tokenize(aspect)]
        if not aspect_toks:
            raise DataError(f"{where}: empty aspect")
        tokens = left_toks + aspect_toks + [t for t, _, _ in tokenize(right)]
        out.append(make_example({"tokens": tokens, "aspect_start": len(left_toks) + 1,
                                 "aspect_len": len(aspect_toks),
                                 "label": RAW_POLARITY[polarity]}, where))
    return out


def convert(src, dst) -> int:
    src = Path(src)
    examples = from_semeval_xml(src) if src.suffix.lower() == ".xml" else from_raw(src)
    dump_examples(examples, dst)
    return len(examples)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m eegcn.convert",
                                     description="SemEval XML or .raw -> JSON lines")
    parser.add_argument("src")
    parser.add_argument("dst")
    args = parser.parse_args(argv)
    try:
        n = convert(args.src, args.dst)
    except (DataError, OSError) as exc:
        print(f"convert: {exc}", file=sys.stderr)
        return 3
    print(f"{n} examples -> {args.dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
