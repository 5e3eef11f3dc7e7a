"""Bounded verdicts of every corpus program against TINI, TSNI, RI and DI."""

import argparse
import time

from mrenforce import CORPUS, load_example, oracle


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-len", type=int, default=3)
    parser.add_argument("--budget", type=int, default=10_000)
    parser.add_argument("--programs", nargs="+", default=list(CORPUS))
    args = parser.parse_args()

    width = max(len(p) for p in args.programs)
    print("program".ljust(width) + "".join(p.upper().rjust(12) for p in oracle.PROPERTIES))
    t = time.perf_counter()
    for name in args.programs:
        prog, env = load_example(name)
        dom = oracle.InputDomain.make(env, args.max_len)
        row = [oracle.check(p, prog, dom, args.budget).verdict for p in oracle.PROPERTIES]
        print(name.ljust(width) + "".join(v.rjust(12) for v in row))
    print(f"(K={args.max_len}, budget={args.budget}, {time.perf_counter() - t:.1f}s)")


if __name__ == "__main__":
    main()
