"""Run every experiment with the calibrated defaults and compare with the reported values.

    python3 scripts/reproduce_results.py --trials 4000 --workers 4 --out results/reproduce
"""

import argparse
from pathlib import Path

import numpy as np

from rydberg_cnot import harness
from rydberg_cnot.harness import ExperimentConfig
from rydberg_cnot.noise import PhysicsConfig
from rydberg_cnot.protocols import ProtocolSpec

# (quantity, reported value)
REPORTED = {
    "A-S truth-table fidelity": 0.73,
    "H-C_Z truth-table fidelity": 0.72,
    "A-S mean column trace": 0.82,
    "H-C_Z mean column trace": 0.84,
    "Bell fidelity (raw)": 0.48,
    "Bell fidelity (trace corrected)": 0.58,
    "Bell trace": 0.83,
    "gap-scan period [us]": 20.0,
    "gap-scan relative phase [rad]": np.pi,
    "P2 at nominal separation": 2.6e-3,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=4000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=PhysicsConfig.rng_seed)
    ap.add_argument("--out", type=Path, default=Path("results/reproduce"))
    args = ap.parse_args()

    physics = PhysicsConfig(trials=args.trials, rng_seed=args.seed)

    def exp(name, sub):
        return ExperimentConfig(physics, ProtocolSpec(name), None, args.out / sub)

    got = {}
    for name, label in (("AS_CNOT", "A-S"), ("HCZ_CNOT", "H-C_Z")):
        s = harness.run_truth_table(exp(name, name.lower()), args.workers)
        got[f"{label} truth-table fidelity"] = s["fidelity"]
        got[f"{label} mean column trace"] = s["meanColumnTrace"]
    b = harness.run_bell(exp("BELL_B1", "bell"), args.workers)
    got["Bell fidelity (raw)"] = b["fidelityRaw"]
    got["Bell fidelity (trace corrected)"] = b["fidelityCorrected"]
    got["Bell trace"] = b["trace"]
    g = harness.run_gap_scan(ExperimentConfig(physics.replace(trials=max(args.trials // 10, 50)),
                                              ProtocolSpec("GAP_SCAN"), None, args.out / "gap"),
                             args.workers, estimator="expected")
    got["gap-scan period [us]"] = g["period"] * 1e6
    got["gap-scan relative phase [rad]"] = abs(g["relativePhase"])
    got["P2 at nominal separation"] = harness.run_p2_check(exp("HCZ_CNOT", "p2"))["analyticP2Nominal"]

    print(f"{'quantity':34s} {'reported':>10s} {'simulated':>10s}")
    for k, v in REPORTED.items():
        print(f"{k:34s} {v:10.4g} {got[k]:10.4g}")


if __name__ == "__main__":
    main()
