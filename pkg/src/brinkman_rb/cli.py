"""Command-line entry point ``brinkman-rb``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import driver
from .parallel import THREADS_ENV, n_threads

EXIT_CONFIG = 2
EXIT_PHASE = 1


def _parser():
    p = argparse.ArgumentParser(
        prog="brinkman-rb",
        description="Certified reduced basis + adaptive ANOVA for stochastic Stokes-Brinkman flow.",
        epilog=f"Worker threads are taken from the {THREADS_ENV} environment variable.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="SCM training, RB-ANOVA, optional Monte Carlo reference")
    s.add_argument("config")
    s.add_argument("--scm-dir", help="reuse SCM data from an earlier run directory")

    s = sub.add_parser("scm-train", help="train coercivity and continuity SCM bounds")
    s.add_argument("config")

    s = sub.add_parser("mc-ref", help="quasi-Monte Carlo reference moments")
    s.add_argument("config")
    s.add_argument("--n", type=int, required=True, help="number of Halton samples")

    s = sub.add_parser("effectivity", help="estimator effectivities at collocation points")
    s.add_argument("config")
    s.add_argument("--samples", type=int, default=100)

    s = sub.add_parser("report", help="recompute the moment error table of a run directory")
    s.add_argument("dir")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        n_threads()
        if args.command == "report":
            print(driver.format_errors(driver.report_directory(args.dir)))
            return 0
        cfg = driver.load_config(args.config)
    except (driver.ConfigError, ValueError) as exc:
        print(f"brinkman-rb: phase 'config' failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except driver.PhaseError as exc:
        print(f"brinkman-rb: {exc}", file=sys.stderr)
        return EXIT_PHASE
    try:
        if args.command == "run":
            rep = driver.run_experiment(cfg, stability_dir=args.scm_dir)
            c = rep.counts
            print(f"high-fidelity solves: {c['hf_solves']}, collocation points: "
                  f"{c['collocation_points']}, N_V = {c['N_V']}, N_Q = {c['N_Q']}")
            if rep.errors:
                print(driver.format_errors(rep.errors))
            print(f"artifacts in {cfg.output_dir}")
        elif args.command == "scm-train":
            prob = driver.setup_problem(cfg)
            st = driver.train_stability(prob)
            print(f"SCM iterations: coercivity {len(st.coercivity.trace)}, continuity "
                  f"{len(st.continuity.trace)}; beta = {st.beta:.6g}")
        elif args.command == "mc-ref":
            prob = driver.setup_problem(cfg)
            cfg.monte_carlo.reference = None
            ref = driver.reference_moments(prob, n_samples=args.n)
            print(f"Monte Carlo reference with {ref.n} samples written to "
                  f"{prob.out / driver.MC_NAME}")
        elif args.command == "effectivity":
            rows = driver.run_effectivity(cfg, args.samples)
            ratios = [r.ratios for r in rows]
            worst = [min(r[i] for r in ratios) for i in range(3)]
            print(f"minimum effectivity: velocity {worst[0]:.4g}, pressure {worst[1]:.4g}, "
                  f"combined {worst[2]:.4g} over {len(rows)} samples")
    except driver.PhaseError as exc:
        print(f"brinkman-rb: {exc}", file=sys.stderr)
        return EXIT_PHASE
    return 0


if __name__ == "__main__":
    sys.exit(main())
