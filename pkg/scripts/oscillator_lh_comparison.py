"""Sequential sampler vs Latin hypercube designs on the two-mode oscillator.

Writes per-seed sequential errors and the LH error table to the output
directory and prints the ratio of mean LH error to median sequential error.

    python scripts/oscillator_lh_comparison.py --out results/osc_m2 --seeds 0 1 2 3 4
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from extremepdf.bench import Oscillator, OscillatorParams, exact_pdf_oracle, lh_baseline
from extremepdf.optimize import PsoConfig
from extremepdf.sampler import SamplerConfig, run


def sequential_error(osc, reference, seed, total, resolution, pso, recalibrate_every):
    cfg = SamplerConfig(nstart=6, ncore=12, max_iterations=total - 6, epsilon=1e-12,
                        recalibrate_every=recalibrate_every, resolution=resolution, seed=seed,
                        pso=PsoConfig(*pso, seed=seed))
    res = run(osc, osc.input, cfg, reference=reference)
    return res.error_vs_oracle, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/osc_m2"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--total", type=int, default=60)
    ap.add_argument("--resolution", type=int, default=100)
    ap.add_argument("--lh-repeats", type=int, default=20)
    ap.add_argument("--recalibrate-every", type=int, default=1,
                    help="hyperparameter refresh period after the L2 phase (0 freezes them)")
    ap.add_argument("--swarm", type=int, nargs=2, default=[40, 60], metavar=("SIZE", "ITERS"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    osc = Oscillator(OscillatorParams(m=2))
    res = (args.resolution, args.resolution)
    t0 = time.perf_counter()
    ref = exact_pdf_oracle(osc, osc.input, res)
    ref.to_csv(args.out / "pdf_exact.csv")
    print(f"oracle: {time.perf_counter() - t0:.1f}s")

    rows = lh_baseline(osc, osc.input, [args.total], args.lh_repeats, 0, ref, res)
    lh = rows[0]
    print(f"LH n={args.total}: mean {lh.mean_error:.4f} sd {lh.sd_error:.4f} ({lh.failures} failures)")

    seq = []
    with open(args.out / "sequential_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "n_points", "error"])
        for seed in args.seeds:
            t0 = time.perf_counter()
            err, result = sequential_error(osc, ref, seed, args.total, res, args.swarm,
                                           args.recalibrate_every)
            seq.append(err)
            w.writerow([seed, len(result.dataset), format(err, ".17g")])
            print(f"seed {seed}: error {err:.4f} ({time.perf_counter() - t0:.0f}s)")
    with open(args.out / "lh_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "mean_error", "sd_error"])
        w.writerow([lh.size, format(lh.mean_error, ".17g"), format(lh.sd_error, ".17g")])
    print(f"ratio mean LH / median sequential = {lh.mean_error / np.median(seq):.2f}")


if __name__ == "__main__":
    main()
