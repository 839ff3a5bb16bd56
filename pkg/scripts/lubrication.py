"""Peak normal traction between two approaching plates against the gap width."""
import argparse

import numpy as np

from febe import output
from febe.config import RunConfig
from febe.scenarios import build_scenario, fluid_only


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--gaps", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--resolution", type=int, default=4)
    args = p.parse_args()
    peaks = []
    for h in args.gaps:
        scn = build_scenario("two_plates", RunConfig("two_plates", gap=h, plate_cells=args.cells))
        op, sol = fluid_only(scn)
        snap = output.make_snapshot(scn.patches, scn.reference, sol.traction, args.resolution)
        peaks.append(np.abs(snap.traction_z).max())
        print(f"h = {h:<8g} peak |t_z| = {peaks[-1]:.4e}  force_z = {sol.total_force(op)[2]:+.3e}"
              f"  nonconverged pairs = {op.nonconverged}")
    if len(peaks) > 1:
        slope = np.polyfit(np.log(args.gaps), np.log(peaks), 1)[0]
        print(f"log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
