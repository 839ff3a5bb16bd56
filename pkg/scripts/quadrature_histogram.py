"""Order histogram of one fluid assembly on the balloon, with the level table."""
import argparse
import os

from febe import bem, output
from febe.config import RunConfig
from febe.quadrature import OrderHistogram
from febe.scenarios import build_scenario
from febe.subdivision import required_levels


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--full", action="store_true", help="full-size balloon")
    p.add_argument("--output-dir", default="output/histogram")
    args = p.parse_args()
    dims = (8, 32, 8) if args.full else (4, 6, 2)
    cfg = RunConfig("balloon", balloon_width=dims[0], balloon_rows=dims[1],
                    balloon_inflow_rows=dims[2])
    scn = build_scenario("balloon", cfg)
    hist = OrderHistogram()
    bem.assemble_fluid(scn.reference, scn.patches, cfg.lam, scn.settings.quadrature,
                       histogram=hist)
    counts = hist.as_dict()
    total = sum(counts.values())
    print(f"{'q':>3} {'count':>10} {'fraction':>10} {'l(q)':>5}")
    for q, n in counts.items():
        print(f"{q:3d} {n:10d} {n / total:10.3e} {required_levels(q):5d}")
    os.makedirs(args.output_dir, exist_ok=True)
    for path in output.emit_plot_data(hist, args.output_dir):
        print("wrote", path)


if __name__ == "__main__":
    main()
