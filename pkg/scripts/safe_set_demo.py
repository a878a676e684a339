"""Print the certified cells of the action grid as a text map.

Rows run from hard braking (top) to hard acceleration (bottom); columns from
right to left lateral acceleration. ``#`` marks a certified cell.

    python3 scripts/safe_set_demo.py --scenario adversarial --mode L --gamma-rule fallback
"""

import argparse

from failsafe_imitation.cli import resolve_scenarios
from failsafe_imitation.geometry import GridPartition
from failsafe_imitation.safe_set import EXTREMAL, LIPSCHITZ, default_gamma, infer_safe_set


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="adversarial")
    p.add_argument("--mode", choices=("L", "E"), default="L")
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--gamma-rule", choices=("zoh", "fallback"), default="fallback")
    p.add_argument("--stage", type=int, default=1)
    args = p.parse_args()

    sc = resolve_scenarios(args.scenario)[0]
    grid = GridPartition(sc.action_box, args.grid, args.grid)
    mode = LIPSCHITZ if args.mode == "L" else EXTREMAL
    gamma = default_gamma(sc, args.stage, args.gamma_rule) if mode == LIPSCHITZ else None
    ss = infer_safe_set(sc, args.stage, grid, mode, gamma)
    safe = set(ss.safe_cells)
    print(f"{sc.name}: {len(ss)}/{grid.n_cells} cells certified"
          + (f" (gamma={gamma:.3g})" if gamma else ""))
    for i in range(grid.nx):
        print("".join("#" if grid.index(i, j) in safe else "." for j in range(grid.ny)))


if __name__ == "__main__":
    main()
