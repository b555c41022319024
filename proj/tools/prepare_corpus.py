#!/usr/bin/env python3
"""Build the desk-scale English corpus from the public-domain Project Gutenberg
Shakespeare texts shipped in the `shakespeare` sdist on PyPI.

    pip download --no-deps shakespeare==0.6 -d /tmp/pd
    python3 tools/prepare_corpus.py /tmp/pd/shakespeare-0.6.tar.gz data/

Plays are taken in alphabetical order until the character budget is reached,
split into paragraphs, and packed into documents of at most --doc-chars
characters. Every --eval-every'th document goes to the held-out split.
"""
import argparse
import json
import re
import tarfile
from pathlib import Path


def paragraphs(text):
    text = text.replace("\r\n", "\n")
    for block in re.split(r"\n\s*\n", text):
        block = block.strip("\n")
        if block.strip():
            yield block


def pack(paras, limit):
    doc = []
    size = 0
    for p in paras:
        if len(p) > limit:
            p = p[:limit]
        extra = len(p) + (2 if doc else 0)
        if doc and size + extra > limit:
            yield "\n\n".join(doc)
            doc, size = [], 0
            extra = len(p)
        doc.append(p)
        size += extra
    if doc:
        yield "\n\n".join(doc)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("sdist")
    ap.add_argument("out_dir")
    ap.add_argument("--chars", type=int, default=2_000_000)
    ap.add_argument("--doc-chars", type=int, default=600)
    ap.add_argument("--eval-every", type=int, default=50)
    args = ap.parse_args()

    texts = {}
    with tarfile.open(args.sdist) as tar:
        for member in tar.getmembers():
            name = Path(member.name).name
            if member.isfile() and name.endswith("_gut.txt") and "/texts/" in member.name:
                texts[name] = tar.extractfile(member).read().decode("utf-8-sig")

    docs = []
    total = 0
    for name in sorted(texts):
        for doc in pack(paragraphs(texts[name]), args.doc_chars):
            docs.append(doc)
            total += len(doc)
        if total >= args.chars:
            break

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "shakespeare_train.jsonl", "w") as train, \
         open(out / "shakespeare_eval.jsonl", "w") as held:
        for i, doc in enumerate(docs):
            target = held if i % args.eval_every == args.eval_every - 1 else train
            target.write(json.dumps({"text": doc}) + "\n")
    print(f"{len(docs)} documents, {total} characters")


if __name__ == "__main__":
    main()
