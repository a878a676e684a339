"""Compare rollout modes on randomized braking-lead scenarios.

    python3 scripts/adversarial_rollouts.py --scenarios 20 --seeds 5
"""

import argparse
import dataclasses

import numpy as np

from failsafe_imitation.rollout import MODES, PolicyConfig, evaluate
from failsafe_imitation.synthetic import adversarial_scenario


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenarios", type=int, default=20)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="scenario generator seed")
    p.add_argument("--gamma-rule", choices=("zoh", "fallback"), default="fallback")
    p.add_argument("--log-std", type=float, default=0.0)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    scenarios = [adversarial_scenario(rng, name=f"adv{i}") for i in range(args.scenarios)]
    base = PolicyConfig(gamma_rule=args.gamma_rule, log_std=(args.log_std, args.log_std))
    print(f"{'mode':<13} {'collision':>9} {'ADE':>7} {'FDE':>7} {'fallback%':>9} {'skipped':>7}")
    for mode in MODES:
        cfg = base if mode != "presafe-only" else dataclasses.replace(base, mean_source="constant",
                                                                      log_std=(1.0, 1.0))
        res = evaluate(scenarios, cfg, mode, range(args.seeds))
        m = res["metrics"]
        stages = [s for r in res["records"] for s in r.stages[:-1]]
        fb = 100.0 * np.mean([s.fallback_used for s in stages]) if stages else 0.0
        print(f"{mode:<13} {m.collision_probability:9.3f} {m.ade:7.2f} {m.fde:7.2f} {fb:9.1f} {m.n_skipped:7d}")


if __name__ == "__main__":
    main()
