"""Write a synthetic topic-labelled sparse dataset in the package's text format.

Usage: python3 scripts/make_text_fixture.py OUT.txt [--rows 10000] [--seed 0]
"""

import argparse

from onlinedefer.environment import make_text_like_dataset, write_sparse_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--rows", type=int, default=10000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=47236)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    ds = make_text_like_dataset(a.rows, n=a.classes, d=a.dim, seed=a.seed)
    write_sparse_dataset(a.out, ds.rows, ds.d, ds.n)


if __name__ == "__main__":
    main()
