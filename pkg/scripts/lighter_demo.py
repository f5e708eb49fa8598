"""Press-and-release run of the lighter button against a linear-spring baseline.

Writes both trajectories as CSV plus the field profile as SVG, and prints the
speed-burst statistics used by the acceptance check.
"""

import argparse
import pathlib

import numpy as np

from jointfield.diag import Annotations, equilibria, profile_grid, render_svg, stick_regions
from jointfield.sim import SimConfig, SimState, rollout
from jointfield.synth import lighter_baseline, lighter_field, lighter_script


def bursts(v):
    fast = np.abs(v) > 3.0 * np.median(np.abs(v))
    out = {}
    for name, sign in (("press", 1), ("release", -1)):
        m = fast & (np.sign(v) == sign)
        out[name] = int(np.count_nonzero(m[1:] & ~m[:-1]) + m[0])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="runs/lighter", help="output directory")
    a = ap.parse_args()
    out = pathlib.Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    drive, n, dt = lighter_script()
    for name, f in (("field", lighter_field()), ("baseline", lighter_baseline())):
        tr = rollout(SimState(0.0, f.joint.q_min, 0.0), f, SimConfig(dt=dt), drive, n)
        tr.write_csv(out / f"{name}.csv")
        g = profile_grid(f)
        ann = Annotations(equilibria(g, f), stick_regions(g), title=f"lighter {name}")
        (out / f"{name}.svg").write_text(render_svg(g, ann))
        peak = np.max(np.abs(tr.v)) / np.median(np.abs(tr.v))
        print(f"{name:8s} max|v|/median|v| = {peak:5.2f}  bursts = {bursts(tr.v)}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
