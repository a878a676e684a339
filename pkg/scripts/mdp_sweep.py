"""Sweep the tabular compounding-error bounds and print a short summary.

    python3 scripts/mdp_sweep.py --tmax 200 --out sweep.csv
"""

import argparse
import csv

from failsafe_imitation.compounding import SWEEP_COLUMNS, gap_closed_form, sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tmax", type=int, default=100)
    p.add_argument("--deltas", default="0.01,0.02,0.05,0.1")
    p.add_argument("--out", default="mdp_sweep.csv")
    args = p.parse_args()

    deltas = [float(v) for v in args.deltas.split(",")]
    rows = sweep(range(2, args.tmax + 1), deltas)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)

    fails = [r for r in rows if not (r["closed_form_pass"] and r["upper_pass"]
                                     and (r["lower_pass"] or not r["lower_applicable"]))]
    print(f"{len(rows)} rows -> {args.out}; {len(fails)} failing")
    print("delta    T   gap(T)    gap(2T)/gap(T)")
    for d in deltas:
        for T in (5, 10, 20, 50):
            if 2 * T <= args.tmax:
                g = gap_closed_form(d, T)
                print(f"{d:<6g} {T:4d} {g:9.4f} {gap_closed_form(d, 2 * T) / g:8.3f}")


if __name__ == "__main__":
    main()
