"""Command line front end."""

import argparse
import json
import math
import sys

import numpy as np

from .dyadic import OpenSet, whitney_decompose, whitney_properties
from .geometry import Interval, load_measure_file
from .harness import (
    ExperimentConfig,
    decompose_energy,
    gen_instance,
    run_equivalence_suite,
    _plain,
)
from .kernel import BesselParam, KernelQuery, eval_kernel
from .operators import TwoWeightInstance, run_testing


def _instance_from_args(args):
    """Instance from a measure file, or a generated one from seed and index."""
    if getattr(args, "file", None):
        lam, sigma, mu = load_measure_file(args.file)
        if args.lam is not None:
            lam = args.lam
        inst = TwoWeightInstance(BesselParam(lam), sigma, mu)
        return inst, np.ones(mu.n), lam
    cfg = ExperimentConfig(seed=args.seed, delta=args.delta)
    gen = gen_instance(cfg, args.index)
    lam = args.lam if args.lam is not None else 1.0
    return gen.instance(lam), gen.phi, lam


def _add_instance_args(sub):
    sub.add_argument("--file", help="measure file (JSON with lambda, sigma, mu)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--index", type=int, default=0,
                     help="instance index under the seed")
    sub.add_argument("--lambda", dest="lam", type=float, default=None)
    sub.add_argument("--delta", type=float, default=0.25)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="besselpoisson",
        description="Bessel Poisson two-weight testing toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_kernel = subs.add_parser("kernel", help="evaluate the kernel at one point")
    p_kernel.add_argument("x", type=float)
    p_kernel.add_argument("y", type=float)
    p_kernel.add_argument("t", type=float)
    p_kernel.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_kernel.add_argument("--rel-tol", type=float, default=1e-10)
    p_kernel.add_argument("--max-depth", type=int, default=60)

    p_whitney = subs.add_parser(
        "whitney", help="Whitney decomposition of a union of intervals")
    p_whitney.add_argument("--omega", required=True,
                           help='parts as "a1,b1;a2,b2;..."')
    p_whitney.add_argument("--mode", choices=["triple", "quintuple"],
                           default="triple")
    p_whitney.add_argument("--min-level", type=int, default=None)

    for name, help_text in (
        ("norm", "two weight operator norm"),
        ("testing", "norm and both testing constants"),
        ("decompose", "level set energy decomposition"),
    ):
        sub = subs.add_parser(name, help=help_text)
        _add_instance_args(sub)

    p_verify = subs.add_parser("verify", help="run the full verification suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--instances", type=int, default=34)
    p_verify.add_argument("--lambda", dest="lam", type=str, default=None,
                          help="comma separated lambda values")
    p_verify.add_argument("--delta", type=float, default=0.25)
    p_verify.add_argument("--out", default=None, help="write the JSON report here")
    p_verify.add_argument("--csv", default=None, help="write the CSV summary here")

    args = parser.parse_args(argv)

    if args.command == "kernel":
        param = BesselParam(args.lam, quad_rel_tol=args.rel_tol,
                            quad_max_depth=args.max_depth)
        value = eval_kernel(param, KernelQuery(args.x, args.y, args.t))
        print(f"{value:.15g}")
        return 0

    if args.command == "whitney":
        try:
            pairs = [tuple(float(v) for v in chunk.split(","))
                     for chunk in args.omega.split(";") if chunk.strip()]
            if any(len(p) != 2 for p in pairs) or not pairs:
                raise ValueError
        except ValueError:
            parser.error('--omega must look like "a1,b1;a2,b2"')
        omega = OpenSet.from_intervals([Interval(a, b) for a, b in pairs])
        coll = whitney_decompose(omega, min_level=args.min_level, mode=args.mode)
        rep = whitney_properties(coll)
        doc = {
            "mode": coll.mode,
            "min_level": coll.min_level,
            "members": [[m.level, m.index, m.a, m.b] for m in coll.members],
            "uncovered_tail": coll.uncovered_tail,
            "coverage_defect": rep.coverage_defect,
            "max_overlap": rep.max_overlap,
            "disjoint": rep.disjoint,
            "members_inside": rep.members_inside,
            "witness_ok": rep.witness_ok,
        }
        print(json.dumps(_plain(doc), indent=2, sort_keys=True))
        return 0

    if args.command == "norm":
        inst, _, lam = _instance_from_args(args)
        res = run_testing(inst)
        doc = {"lambda": lam, "N": res.norm, "iterations": res.iterations,
               "converged": res.converged}
        print(json.dumps(_plain(doc), indent=2, sort_keys=True))
        return 0 if res.converged else 1

    if args.command == "testing":
        inst, _, lam = _instance_from_args(args)
        res = run_testing(inst)
        doc = {"lambda": lam, "N": res.norm, "F": res.forward, "B": res.backward,
               "ratio": res.ratio, "iterations": res.iterations,
               "converged": res.converged,
               "forward_witness": res.forward_witness,
               "backward_witness": res.backward_witness}
        print(json.dumps(_plain(doc), indent=2, sort_keys=True))
        return 0 if res.converged else 1

    if args.command == "decompose":
        inst, phi, lam = _instance_from_args(args)
        cfg = ExperimentConfig(seed=args.seed, delta=args.delta,
                               lambda_set=(lam,))
        report = decompose_energy(inst, phi, cfg)
        print(json.dumps(_plain(report), indent=2, sort_keys=True))
        ok = (not report["max_principle"]["violations"]
              and report["qualify"]["ok"] and report["lacey"]["ok"]
              and report["a_le_delta_total"] and report["band_bracket_ok"])
        return 0 if ok else 1

    if args.command == "verify":
        lambda_set = (0.5, 1.0, 2.0)
        if args.lam:
            lambda_set = tuple(float(tok) for tok in args.lam.split(","))
        cfg = ExperimentConfig(seed=args.seed, instance_count=args.instances,
                               lambda_set=lambda_set, delta=args.delta)
        report = run_equivalence_suite(cfg)
        if args.out:
            report.save_json(args.out)
        if args.csv:
            report.save_csv(args.csv)
        agg = dict(report.aggregates)
        agg["passed"] = report.passed
        agg["n_failures"] = len(report.failures)
        print(json.dumps(_plain(agg), indent=2, sort_keys=True))
        if not report.passed:
            for f in report.failures[:20]:
                print(f"FAIL instance={f['instance']} lambda={f['lambda']} "
                      f"{f['check']}: {f['detail']}", file=sys.stderr)
        return 0 if report.passed else 1

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
