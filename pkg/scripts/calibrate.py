"""Fit the per-atom pumping error to a target preparation-table diagonal.

    python3 scripts/calibrate.py --target 0.83 --trials 4000
"""

import argparse

import numpy as np

from rydberg_cnot.noise import PhysicsConfig, calibrate_prep_error, expected_prep_diagonal


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", type=float, default=0.83, help="mean normalized diagonal")
    ap.add_argument("--trials", type=int, default=4000, help="trials per pumping pattern")
    ap.add_argument("--pulse-area-error", type=float, default=PhysicsConfig.pulse_area_error)
    ap.add_argument("--rydberg-area-error", type=float, default=PhysicsConfig.rydberg_area_error)
    args = ap.parse_args()

    config = PhysicsConfig(pulse_area_error=args.pulse_area_error,
                           rydberg_area_error=args.rydberg_area_error)
    eps = calibrate_prep_error(config, target=args.target, trials=args.trials)
    diag = expected_prep_diagonal(config, args.trials)
    print(f"prepErrorPerAtom = {eps:.6f}")
    print(f"diagonal at eps: {diag(eps):.6f} (target {args.target})")
    if args.pulse_area_error == 0:
        print(f"closed form 1 - sqrt(target) = {1 - np.sqrt(args.target):.6f}")


if __name__ == "__main__":
    main()
