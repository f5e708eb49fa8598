"""Hard-mode rollout throughput on random fields (steps per second)."""

import argparse
import time

import numpy as np

from jointfield.sim import SimConfig, SimState, rollout
from jointfield.synth import random_field


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=1_000_000, help="steps per rollout")
    ap.add_argument("--fields", type=int, default=5, help="number of random fields")
    a = ap.parse_args()
    rng = np.random.default_rng(0)
    cfg = SimConfig(dt=1e-4)
    for k in range(a.fields):
        f = random_field(rng)
        s0 = SimState(0.0, f.joint.q_of(0.5), 0.0)
        rollout(s0, f, cfg, 0.0, 10)
        t0 = time.perf_counter()
        rollout(s0, f, cfg, 0.0, a.steps)
        rate = a.steps / (time.perf_counter() - t0)
        print(f"field {k}: {len(f.components)} components, {rate:.3e} steps/s")


if __name__ == "__main__":
    main()
