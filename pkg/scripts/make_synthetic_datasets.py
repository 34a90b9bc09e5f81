"""Write the desk-scale corpora as TUDataset directories with registers.

    python3 scripts/make_synthetic_datasets.py data/

Creates ``PLANTED`` (two structural classes) and ``TWINS`` (random corpus
with species-only twins, labelled by node-count parity so that the
benchmark stage sees two classes).
"""

import argparse
import dataclasses
from pathlib import Path

from rydkernel.corpora import export_corpus, planted_class_corpus, rank_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--n-graphs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    graphs, regs = planted_class_corpus(args.n_graphs, seed=args.seed)
    paths = export_corpus(graphs, regs, args.out / "PLANTED", "PLANTED")
    print("PLANTED:", paths)

    graphs, regs, pairs = rank_corpus(args.n_graphs, seed=args.seed)
    graphs = [dataclasses.replace(g, graph_label=1 if g.node_count % 2 else -1) for g in graphs]
    paths = export_corpus(graphs, regs, args.out / "TWINS", "TWINS")
    pos = {g.id: k + 1 for k, g in enumerate(graphs)}  # TUDataset ids are 1-based positions
    print("TWINS:", paths, "planted pairs:", [(pos[a], pos[b]) for a, b in pairs])


if __name__ == "__main__":
    main()
