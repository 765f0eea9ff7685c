#!/usr/bin/env python3
"""Convert the Planetoid Pubmed files (ind.pubmed.*) into a capgnn dataset directory.

usage: export_pubmed.py RAW_DIR OUT_DIR [--seed N]

RAW_DIR holds ind.pubmed.{x,y,tx,ty,allx,ally,graph,test.index}. Needs numpy and scipy.
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

NAMES = ["x", "y", "tx", "ty", "allx", "ally", "graph"]


def load_raw(raw: Path):
    parts = {}
    for name in NAMES:
        with open(raw / f"ind.pubmed.{name}", "rb") as f:
            parts[name] = pickle.load(f, encoding="latin1")
    test_index = [int(line) for line in (raw / "ind.pubmed.test.index").read_text().split()]
    return parts, test_index


def assemble(parts, test_index):
    allx, tx = parts["allx"], parts["tx"]
    features = sp.vstack([allx, tx]).tolil()
    labels = np.vstack([parts["ally"], parts["ty"]])
    order = np.sort(test_index)
    features[test_index, :] = features[order, :]
    labels[test_index, :] = labels[order, :]
    n = features.shape[0]
    edges = set()
    for src, neighbors in parts["graph"].items():
        for dst in neighbors:
            if src != dst and src < n and dst < n:
                edges.add((min(src, dst), max(src, dst)))
    return features.toarray(), labels.argmax(axis=1), sorted(edges)


def stratified_split(labels, num_classes, seed):
    rng = np.random.default_rng(seed)
    split = {"train": [], "val": [], "test": []}
    for c in range(num_classes):
        ids = np.flatnonzero(labels == c)
        rng.shuffle(ids)
        n_train = round(0.6 * len(ids))
        n_val = round(0.2 * len(ids))
        split["train"] += ids[:n_train].tolist()
        split["val"] += ids[n_train : n_train + n_val].tolist()
        split["test"] += ids[n_train + n_val :].tolist()
    return {k: sorted(v) for k, v in split.items()}


def write(out: Path, features, labels, edges, split):
    out.mkdir(parents=True, exist_ok=True)
    n, d = features.shape
    k = int(labels.max()) + 1
    (out / "meta.json").write_text(json.dumps({"n": n, "d": d, "num_classes": k}) + "\n")
    with open(out / "edges.tsv", "w") as f:
        f.writelines(f"{i}\t{j}\n" for i, j in edges)
    with open(out / "features.csv", "w") as f:
        for row in features:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    (out / "labels.txt").write_text("".join(f"{int(c)}\n" for c in labels))
    (out / "split.json").write_text(json.dumps(split) + "\n")
    return n, len(edges), d, k


def main(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("raw_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    parts, test_index = load_raw(args.raw_dir)
    features, labels, edges = assemble(parts, test_index)
    split = stratified_split(labels, int(labels.max()) + 1, args.seed)
    n, m, d, k = write(args.out_dir, features, labels, edges, split)
    print(f"nodes {n} edges {m} features {d} classes {k}")


if __name__ == "__main__":
    main(sys.argv[1:])
