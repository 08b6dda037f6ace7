#!/usr/bin/env python3
"""Finite-difference verification of the differentiable building blocks.

Every operator the tracker trains through is checked against central
differences on the diagnostic geometry. This is the same machinery the
`spectrack gradcheck` subcommand drives.
"""

import argparse

from spectrack.evaluation import gradient_checks


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--module", default="dff",
                    choices=("all", "dff", "dwf", "wer", "set", "std", "head", "loss"))
    ap.add_argument("--tol", type=float, default=1e-4)
    args = ap.parse_args()

    results = gradient_checks(module=args.module, tol=args.tol)
    for name, report in results:
        flag = "ok  " if report.passed else "FAIL"
        print(f"{flag} {name:40s} max rel err {report.max_rel_error:.2e} "
              f"({report.checked} coordinates)")
        if report.flagged:
            print(f"     {len(report.flagged)} coordinates near kinks were skipped")
    n_pass = sum(1 for _, r in results if r.passed)
    print(f"\n{n_pass}/{len(results)} checks passed")


if __name__ == "__main__":
    main()
