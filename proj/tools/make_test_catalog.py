#!/usr/bin/env python3
"""Generate the synthetic bright-star catalog shipped as data/catalog_bright.csv.

Positions are uniform on the unit sphere. Magnitudes follow the bright-star
cumulative law N(<m) ~ 10^(0.51 m), normalized so roughly 5000 of the stars
are at or brighter than V=6.0 (the Hipparcos naked-eye count), with the full
file extending to V=6.5 so magnitude-limit filtering has something to cut.
Ids are unique integers in the Hipparcos id range. Output is deterministic.
"""

import argparse
import math
import random


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=9000)
    ap.add_argument("--mag-max", type=float, default=6.5)
    ap.add_argument("--slope", type=float, default=0.51)
    ap.add_argument("--seed", type=int, default=20240615)
    ap.add_argument("--out", default="data/catalog_bright.csv")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    n = args.count

    # Quantile-spaced magnitudes: the i-th faintest star sits at the magnitude
    # where the cumulative law predicts (i+1)/n of the population.
    mags = [args.mag_max + math.log10((i + 1) / n) / args.slope for i in range(n)]
    rng.shuffle(mags)  # decorrelate magnitude from position/id order

    ids = rng.sample(range(1, 118323), n)
    ids.sort()

    rows = []
    for hip, vmag in zip(ids, mags):
        ra = 360.0 * rng.random()
        dec = math.degrees(math.asin(2.0 * rng.random() - 1.0))
        rows.append((hip, ra, dec, vmag))

    with open(args.out, "w") as f:
        f.write("hip_id,ra_deg,dec_deg,vmag\n")
        for hip, ra, dec, vmag in rows:
            f.write(f"{hip},{ra:.8f},{dec:.8f},{vmag:.3f}\n")

    bright = sum(1 for r in rows if r[3] <= 6.0)
    print(f"wrote {len(rows)} stars to {args.out} ({bright} with vmag <= 6.0)")


if __name__ == "__main__":
    main()
