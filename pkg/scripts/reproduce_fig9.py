"""Run the running example on its worked input under each two-copy policy
and print the time x channel tables."""

import argparse

from mrenforce import em, example_trace, load_example, tracefmt
from mrenforce.policies import get_policy


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--policies", nargs="+", default=["ri", "ni", "di", "subdi"])
    parser.add_argument("--sched", default="round-robin", choices=("lowest", "round-robin", "random"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    prog, env = load_example("fig8")
    inq = example_trace("fig9")
    for name in args.policies:
        res = em.run_enforced(prog, get_policy(name), inq, env, em.SchedulerSpec(args.sched, args.seed))
        print(tracefmt.pretty(tracefmt.enforced_doc(res, inq, name, env)))
        print()


if __name__ == "__main__":
    main()
