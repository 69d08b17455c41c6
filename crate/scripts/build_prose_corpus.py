#!/usr/bin/env python3
"""Rebuild data/prose-5mb.txt.gz from docstrings of locally installed Python packages.

One paragraph per line. Paragraphs are filtered to mostly-alphabetic prose,
deduplicated, ordered by content hash and truncated to just over 5 MiB.
"""
import ast
import gzip
import hashlib
import os
import sys

TARGET = 5 * 1024 * 1024
PACKAGES = ["sklearn", "scipy", "numpy", "pandas", "statsmodels", "networkx",
            "sympy", "matplotlib", "requests", "jinja2", "click", "attr", "rich",
            "sqlalchemy"]


def roots():
    yield "/usr/lib/python3.10"
    for p in PACKAGES:
        yield "/usr/local/lib/python3.10/dist-packages/" + p


def paragraphs():
    seen = set()
    for root in roots():
        for dirpath, dirnames, filenames in sorted(os.walk(root)):
            dirnames.sort()
            if "site-packages" in dirpath or "/test" in dirpath:
                continue
            if root == "/usr/lib/python3.10" and "dist-packages" in dirpath:
                continue
            for name in sorted(filenames):
                if not name.endswith(".py"):
                    continue
                try:
                    with open(os.path.join(dirpath, name), encoding="utf-8") as f:
                        tree = ast.parse(f.read())
                except Exception:
                    continue
                for node in ast.walk(tree):
                    if not isinstance(node, (ast.FunctionDef, ast.ClassDef,
                                             ast.AsyncFunctionDef, ast.Module)):
                        continue
                    doc = ast.get_docstring(node)
                    if not doc or len(doc) < 300:
                        continue
                    for para in doc.split("\n\n"):
                        lines = para.split("\n")
                        if any(l.lstrip().startswith((">>>", "...")) for l in lines):
                            continue
                        text = " ".join(l.strip() for l in lines if l.strip())
                        if len(text) < 80:
                            continue
                        prose = sum(c.isalpha() or c == " " for c in text)
                        if prose / len(text) < 0.85:
                            continue
                        digest = hashlib.md5(text.encode()).hexdigest()
                        if digest in seen:
                            continue
                        seen.add(digest)
                        yield digest, text


def main(out_path):
    paras = sorted(paragraphs())
    out, total = [], 0
    for _, text in paras:
        if total >= TARGET:
            break
        out.append(text)
        total += len(text.encode()) + 1
    with gzip.GzipFile(out_path, "wb", mtime=0) as f:
        f.write(("\n".join(out) + "\n").encode())
    print(f"{len(out)} paragraphs, {total} bytes -> {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/prose-5mb.txt.gz")
