#!/usr/bin/env python3
"""Convert public citation-network releases to the dataset directory format.

Two source formats are supported (see docs/data_format.md for the target
format):

``linqs``
    The original raw release: a ``<name>.content`` file (one line per
    paper: id, tab-separated feature values, class name) and a
    ``<name>.cites`` file (one ``cited citing`` pair per line).  String ids
    map to 0..N-1 in .content order; class names map to indices in sorted
    order.  Citations mentioning unknown ids are skipped with a warning
    (the CiteSeer release contains a few).

``ind``
    The pickled split release used by many graph-learning papers:
    ``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}`` in one
    directory.  Requires scipy (the pickles contain scipy sparse
    matrices).  Gaps in ``test.index`` (present in CiteSeer) become
    isolated nodes with class 0; they carry no edges and no real label, so
    avoid sampling them.

Examples:

    python3 contrib/convert_planetoid.py linqs \
        --content cora/cora.content --cites cora/cora.cites \
        --out data/cora --name cora

    python3 contrib/convert_planetoid.py ind \
        --dir planetoid/data --name citeseer --out data/citeseer
"""

from __future__ import annotations

import argparse
import os
import pickle
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dualgnn.data import Dataset, build_undirected_adjacency, save_dataset


def convert_linqs(content_path: str, cites_path: str, name: str) -> Dataset:
    ids: dict[str, int] = {}
    feature_rows: list[np.ndarray] = []
    label_names: list[str] = []
    with open(content_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                continue
            ids[parts[0]] = len(ids)
            feature_rows.append(np.asarray(parts[1:-1], dtype=np.float64))
            label_names.append(parts[-1])
    classes = {c: i for i, c in enumerate(sorted(set(label_names)))}
    labels = np.asarray([classes[c] for c in label_names], dtype=np.int64)
    features = np.vstack(feature_rows)

    src, dst, skipped = [], [], 0
    with open(cites_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                continue
            a, b = ids.get(parts[0]), ids.get(parts[1])
            if a is None or b is None:
                skipped += 1
                continue
            if a != b:
                src.append(a)
                dst.append(b)
    if skipped:
        print(f"warning: skipped {skipped} citations involving ids missing "
              f"from {os.path.basename(content_path)}", file=sys.stderr)
    adjacency = build_undirected_adjacency(src, dst, len(ids))
    print(f"classes: {sorted(classes, key=classes.get)}")
    return Dataset(features=features, labels=labels, adjacency=adjacency,
                   num_classes=len(classes), name=name)


def _load_pickle(path: str):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_ind(directory: str, name: str) -> Dataset:
    try:
        import scipy.sparse as sp
    except ImportError as exc:
        raise SystemExit(
            "the 'ind' format stores scipy sparse matrices; install scipy "
            "or use the 'linqs' raw release instead") from exc

    def path(suffix: str) -> str:
        return os.path.join(directory, f"ind.{name}.{suffix}")

    allx = _load_pickle(path("allx"))
    tx = _load_pickle(path("tx"))
    ally = np.asarray(_load_pickle(path("ally")))
    ty = np.asarray(_load_pickle(path("ty")))
    graph = _load_pickle(path("graph"))
    test_idx = np.loadtxt(path("test.index"), dtype=np.int64)

    test_range = np.arange(test_idx.min(), test_idx.max() + 1)
    num_test = test_range.size
    tx_full = sp.lil_matrix((num_test, allx.shape[1]))
    ty_full = np.zeros((num_test, ty.shape[1]))
    tx_full[test_idx - test_idx.min()] = tx
    ty_full[test_idx - test_idx.min()] = ty
    gaps = num_test - test_idx.size
    if gaps:
        print(f"warning: {gaps} isolated filler nodes added for gaps in "
              f"test.index; they get class 0 and should not be sampled",
              file=sys.stderr)

    features = np.asarray(
        sp.vstack([allx, tx_full]).todense(), dtype=np.float64)
    onehot = np.vstack([ally, ty_full])
    labels = np.argmax(onehot, axis=1).astype(np.int64)

    num_nodes = features.shape[0]
    src, dst = [], []
    for node, neighbors in graph.items():
        for other in neighbors:
            if node != other and node < num_nodes and other < num_nodes:
                src.append(node)
                dst.append(other)
    adjacency = build_undirected_adjacency(src, dst, num_nodes)
    return Dataset(features=features, labels=labels, adjacency=adjacency,
                   num_classes=onehot.shape[1], name=name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="format", required=True)

    p_linqs = sub.add_parser("linqs", help="raw .content/.cites release")
    p_linqs.add_argument("--content", required=True)
    p_linqs.add_argument("--cites", required=True)
    p_linqs.add_argument("--out", required=True)
    p_linqs.add_argument("--name", required=True)

    p_ind = sub.add_parser("ind", help="pickled ind.<name>.* release")
    p_ind.add_argument("--dir", required=True)
    p_ind.add_argument("--name", required=True)
    p_ind.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.format == "linqs":
        ds = convert_linqs(args.content, args.cites, args.name)
    else:
        ds = convert_ind(args.dir, args.name)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.num_nodes} nodes, "
          f"{ds.adjacency.nnz // 2} undirected edges, "
          f"{ds.num_features} features, {ds.num_classes} classes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
