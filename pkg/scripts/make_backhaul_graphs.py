#!/usr/bin/env python3
"""Write the fixed 5-node backhaul graphs used by the trajectory study.

ring_chord           ring 1-2-3-4-5-1 with the chord 1-3
ring_chord_permuted  the same graph relabelled by pi = (1,3,5,2,4)
star                 node 2 linked to every other node
complete             every pair linked

The physical layer is complete in all four files.
"""

import argparse
from pathlib import Path

from dmpnn.graphs import MultiplexNetwork, Permutation, complete_graph, permute, write_graph

N = 5
PI = [1, 3, 5, 2, 4]


def graphs() -> dict[str, MultiplexNetwork]:
    full = complete_graph(N)
    ring = [(k, (k + 1) % N) for k in range(N)] + [(0, 2)]
    base = MultiplexNetwork(N, full, ring)
    return {
        "ring_chord": base,
        "ring_chord_permuted": permute(base, Permutation.from_one_based(PI)),
        "star": MultiplexNetwork(N, full, [(1, j) for j in range(N) if j != 1]),
        "complete": MultiplexNetwork(N, full, full),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default=Path(__file__).parent / "graphs", type=Path)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, net in graphs().items():
        write_graph(net, args.out / f"{name}.txt")
        print(f"wrote {args.out / name}.txt")


if __name__ == "__main__":
    main()
